//! Dataset file layout (all integers and reals little-endian):
//!
//! ```text
//! magic  b"DPDT"
//! version u32                  (currently 1)
//! manifest_len u64, manifest UTF-8 TOML (DatasetManifest)
//! per episode:
//!   seed u64, success u8, T u64
//!   init_pose f64 × 3 (x, y, yaw)
//!   appearance f64 × 4 (door, handle, background, gain)
//!   proprio  f32 × T×11
//!   rasters  f32 × T×3×32×32
//!   actions  f32 × T×10
//! ```
//!
//! write → read → write is byte-identical: the manifest re-serializes
//! deterministically and arrays round-trip bit-exactly.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::worldsim::{AppearanceSpec, Pose};

use super::{DatasetError, DatasetManifest, DemoDataset, Episode, EpisodeMeta, RASTER_LEN};
use crate::worldsim::{ACTION_DIM, PROPRIO_DIM};

pub const DATASET_MAGIC: &[u8; 4] = b"DPDT";
pub const DATASET_VERSION: u32 = 1;
const MAX_MANIFEST: u64 = 1 << 20;
const MAX_EPISODE_STEPS: u64 = 1_000_000;

pub fn write_dataset(path: &Path, ds: &DemoDataset) -> Result<(), DatasetError> {
    let manifest =
        toml::to_string(&ds.manifest).map_err(|e| DatasetError::Format(e.to_string()))?;
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(DATASET_MAGIC);
    buf.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    buf.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    buf.extend_from_slice(manifest.as_bytes());
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    for ep in &ds.episodes {
        let mut chunk: Vec<u8> = Vec::with_capacity(64 + 4 * (ep.rasters.len() + ep.proprio.len() + ep.actions.len()));
        chunk.extend_from_slice(&ep.meta.seed.to_le_bytes());
        chunk.push(ep.meta.success as u8);
        chunk.extend_from_slice(&(ep.len() as u64).to_le_bytes());
        for v in [ep.meta.init_pose.x, ep.meta.init_pose.y, ep.meta.init_pose.yaw] {
            chunk.extend_from_slice(&v.to_le_bytes());
        }
        for v in [
            ep.meta.appearance.door_intensity,
            ep.meta.appearance.handle_intensity,
            ep.meta.appearance.background_intensity,
            ep.meta.appearance.brightness_gain,
        ] {
            chunk.extend_from_slice(&v.to_le_bytes());
        }
        for arr in [&ep.proprio, &ep.rasters, &ep.actions] {
            for v in arr.iter() {
                chunk.extend_from_slice(&v.to_le_bytes());
            }
        }
        f.write_all(&chunk)?;
    }
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<DemoDataset, DatasetError> {
    let bytes = fs::read(path)?;
    read_dataset_bytes(&bytes)
}

/// Parse dataset bytes. Every length is validated against the remaining
/// input before allocation, so arbitrary input cannot trigger huge
/// allocations or panics.
pub fn read_dataset_bytes(bytes: &[u8]) -> Result<DemoDataset, DatasetError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != DATASET_MAGIC {
        return Err(DatasetError::Format("bad magic".into()));
    }
    if r.u32()? != DATASET_VERSION {
        return Err(DatasetError::Format("unsupported version".into()));
    }
    let mlen = r.u64()?;
    if mlen > MAX_MANIFEST {
        return Err(DatasetError::Format("manifest too large".into()));
    }
    let manifest_text = std::str::from_utf8(r.take(mlen as usize)?)
        .map_err(|_| DatasetError::Format("manifest is not UTF-8".into()))?;
    let manifest: DatasetManifest =
        toml::from_str(manifest_text).map_err(|e| DatasetError::Format(e.to_string()))?;
    if manifest.proprio_dim as usize != PROPRIO_DIM
        || manifest.action_dim as usize != ACTION_DIM
        || manifest.views as usize != super::VIEWS
        || manifest.raster_size as usize != crate::worldsim::RASTER_SIZE
    {
        return Err(DatasetError::Format("unsupported dimensions".into()));
    }
    if manifest.stats.proprio_min.len() != PROPRIO_DIM
        || manifest.stats.proprio_max.len() != PROPRIO_DIM
        || manifest.stats.action_min.len() != ACTION_DIM
        || manifest.stats.action_max.len() != ACTION_DIM
    {
        return Err(DatasetError::Format("stats dimension mismatch".into()));
    }
    let mut episodes = Vec::new();
    for _ in 0..manifest.episodes {
        let seed = r.u64()?;
        let success = r.take(1)?[0] != 0;
        let t = r.u64()?;
        if t == 0 || t > MAX_EPISODE_STEPS {
            return Err(DatasetError::Format(format!("bad episode length {t}")));
        }
        let t = t as usize;
        let mut pose = [0.0f64; 3];
        for v in pose.iter_mut() {
            *v = r.f64()?;
        }
        let mut app = [0.0f64; 4];
        for v in app.iter_mut() {
            *v = r.f64()?;
        }
        let need = t
            .checked_mul(PROPRIO_DIM + RASTER_LEN + ACTION_DIM)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| DatasetError::Format("episode size overflow".into()))?;
        if need > r.remaining() {
            return Err(DatasetError::Format("episode data exceeds file size".into()));
        }
        let proprio = r.f32_array(t * PROPRIO_DIM)?;
        let rasters = r.f32_array(t * RASTER_LEN)?;
        let actions = r.f32_array(t * ACTION_DIM)?;
        episodes.push(Episode {
            meta: EpisodeMeta {
                seed,
                init_pose: Pose::new(pose[0], pose[1], pose[2]),
                appearance: AppearanceSpec {
                    door_intensity: app[0],
                    handle_intensity: app[1],
                    background_intensity: app[2],
                    brightness_gain: app[3],
                },
                success,
            },
            proprio,
            rasters,
            actions,
        });
    }
    if r.remaining() != 0 {
        return Err(DatasetError::Format("trailing bytes".into()));
    }
    Ok(DemoDataset { manifest, episodes })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DatasetError> {
        if self.pos + n > self.bytes.len() {
            return Err(DatasetError::Format("truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u32(&mut self) -> Result<u32, DatasetError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, DatasetError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, DatasetError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32_array(&mut self, n: usize) -> Result<Vec<f32>, DatasetError> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{collect_demos, RandomizationSpec};
    use crate::worldsim::WorldSpec;
    use proptest::prelude::*;

    #[test]
    fn write_read_write_is_byte_identical() {
        let (ds, _) = collect_demos(1, 3, &WorldSpec::default(), &RandomizationSpec::default())
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.dpdt");
        let p2 = dir.path().join("b.dpdt");
        write_dataset(&p1, &ds).unwrap();
        let back = read_dataset(&p1).unwrap();
        assert_eq!(back, ds);
        write_dataset(&p2, &back).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn rejects_malformed_headers() {
        assert!(read_dataset_bytes(b"").is_err());
        assert!(read_dataset_bytes(b"DPDTxxxx").is_err());
        let mut lie = Vec::new();
        lie.extend_from_slice(DATASET_MAGIC);
        lie.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        lie.extend_from_slice(&u64::MAX.to_le_bytes());
        assert!(read_dataset_bytes(&lie).is_err());
    }

    proptest! {
        #[test]
        fn prop_parser_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = read_dataset_bytes(&bytes);
        }
    }
}
