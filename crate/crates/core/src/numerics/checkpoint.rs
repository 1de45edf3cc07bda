//! Parameter checkpoint file.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic  b"DPCK"
//! version u32                       (currently 1)
//! count   u64                       number of named tensors
//! per tensor:
//!   name_len u64, name UTF-8 bytes
//!   rank u64, dims u64 × rank
//!   data f32 little-endian × Π dims
//! ```
//!
//! Round trips are bit-exact: tensors are written in the order given and
//! read back in the same order.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::tensor::Tensor;
use super::{NumericsError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DPCK";
const VERSION: u32 = 1;
const MAX_NAME: u64 = 4096;
const MAX_RANK: u64 = 8;

pub fn write_checkpoint<'a>(
    path: &Path,
    tensors: impl Iterator<Item = (&'a str, &'a Tensor<f32>)>,
) -> Result<()> {
    let entries: Vec<_> = tensors.collect();
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(entries.len() as u64).to_le_bytes());
    for (name, tensor) in entries {
        buf.extend_from_slice(&(name.len() as u64).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(tensor.shape().len() as u64).to_le_bytes());
        for &d in tensor.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let bytes = fs::read(path)?;
    read_checkpoint_bytes(&bytes)
}

/// Parse checkpoint bytes. Rejects malformed input without large speculative
/// allocations, so it is safe on untrusted data.
pub fn read_checkpoint_bytes(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(bad("bad magic"));
    }
    if r.u32()? != VERSION {
        return Err(bad("unsupported version"));
    }
    let count = r.u64()?;
    if count > (bytes.len() as u64) {
        return Err(bad("tensor count exceeds file size"));
    }
    let mut out = Vec::new();
    for _ in 0..count {
        let name_len = r.u64()?;
        if name_len > MAX_NAME {
            return Err(bad("name too long"));
        }
        let name = std::str::from_utf8(r.take(name_len as usize)?)
            .map_err(|_| bad("name is not UTF-8"))?
            .to_string();
        let rank = r.u64()?;
        if rank == 0 || rank > MAX_RANK {
            return Err(bad("bad rank"));
        }
        let mut dims = Vec::with_capacity(rank as usize);
        let mut numel: usize = 1;
        for _ in 0..rank {
            let d = r.u64()?;
            if d == 0 || d > u32::MAX as u64 {
                return Err(bad("bad dimension"));
            }
            numel = numel.checked_mul(d as usize).ok_or_else(|| bad("dims overflow"))?;
            dims.push(d as usize);
        }
        if numel.checked_mul(4).map(|n| n > r.remaining()).unwrap_or(true) {
            return Err(bad("tensor data exceeds file size"));
        }
        let raw = r.take(numel * 4)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push((name, Tensor::new(dims, data)?));
    }
    if r.remaining() != 0 {
        return Err(bad("trailing bytes"));
    }
    Ok(out)
}

fn bad(msg: &str) -> NumericsError {
    NumericsError::Checkpoint(msg.to_string())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(bad("truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.dpck");
        let p2 = dir.path().join("b.dpck");
        let t1 = Tensor::<f32>::from_fn(vec![2, 3], |i| (i as f32).sin() * 1e-3);
        let t2 = Tensor::<f32>::from_fn(vec![4], |i| f32::from_bits(0x7f7f_fff0 + i as u32));
        write_checkpoint(&p1, [("w/a", &t1), ("b", &t2)].into_iter()).unwrap();
        let loaded = read_checkpoint(&p1).unwrap();
        assert_eq!(loaded.len(), 2);
        assert_eq!(loaded[0].0, "w/a");
        assert_eq!(loaded[0].1, t1);
        assert_eq!(loaded[1].1, t2);
        write_checkpoint(&p2, loaded.iter().map(|(n, t)| (n.as_str(), t))).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn rejects_malformed_inputs() {
        assert!(read_checkpoint_bytes(b"").is_err());
        assert!(read_checkpoint_bytes(b"XXXX").is_err());
        let mut huge = Vec::new();
        huge.extend_from_slice(CHECKPOINT_MAGIC);
        huge.extend_from_slice(&1u32.to_le_bytes());
        huge.extend_from_slice(&u64::MAX.to_le_bytes());
        assert!(read_checkpoint_bytes(&huge).is_err());
        // valid header claiming an enormous tensor must not allocate
        let mut lie = Vec::new();
        lie.extend_from_slice(CHECKPOINT_MAGIC);
        lie.extend_from_slice(&1u32.to_le_bytes());
        lie.extend_from_slice(&1u64.to_le_bytes());
        lie.extend_from_slice(&1u64.to_le_bytes());
        lie.push(b'x');
        lie.extend_from_slice(&2u64.to_le_bytes());
        lie.extend_from_slice(&0xffff_ffffu64.to_le_bytes());
        lie.extend_from_slice(&0xffff_ffffu64.to_le_bytes());
        assert!(read_checkpoint_bytes(&lie).is_err());
    }

    proptest! {
        #[test]
        fn prop_parser_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
            let _ = read_checkpoint_bytes(&bytes);
        }
    }
}
