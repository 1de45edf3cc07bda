//! Demonstration collection and the on-disk dataset.
//!
//! Episodes are recorded at the 50 Hz simulation rate; the policy consumes
//! them through a 10 Hz view (every 5th frame, see [`EpisodeView`]).

mod collect;
mod format;
mod window;

pub use collect::{collect_demos, CollectSummary};
pub use format::{read_dataset, read_dataset_bytes, write_dataset, DATASET_MAGIC};
pub use window::{sample_window, EpisodeView, Normalizer, WindowSample};

use serde::{Deserialize, Serialize};

use crate::worldsim::{AppearanceSpec, Pose, PROPRIO_DIM};
use crate::worldsim::{ACTION_DIM, RASTER_SIZE};
use rand::Rng;
use thiserror::Error;

/// Raster views per observation.
pub const VIEWS: usize = 3;
/// Flat length of one step's rasters.
pub const RASTER_LEN: usize = VIEWS * RASTER_SIZE * RASTER_SIZE;
/// Policy control runs at 10 Hz on a 50 Hz recording.
pub const POLICY_SUBSAMPLE: usize = 5;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset format: {0}")]
    Format(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(
        "environment misconfiguration: expert succeeded on {successes}/{attempts} attempts (< 50%)"
    )]
    Misconfigured { successes: usize, attempts: usize },
    #[error("episode slot {slot} failed {attempts} attempts; last error: {last}")]
    SlotExhausted {
        slot: usize,
        attempts: usize,
        last: String,
    },
    #[error("invariant violation: {0}")]
    Invariant(String),
}

/// Initial-pose and appearance randomization ranges. Initial poses sit on
/// the pull side at `lateral_mean ± lateral_span` from the door plane with a
/// small longitudinal offset and a wide yaw range; appearance ranges drive
/// the raster intensities.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RandomizationSpec {
    pub lateral_mean: f64,
    pub lateral_span: f64,
    pub longitudinal_span: f64,
    pub yaw_span: f64,
    /// Nominal y of the starting pose (doorway-relative).
    pub base_y_nominal: f64,
    pub door_intensity: [f64; 2],
    pub handle_intensity: [f64; 2],
    pub background_intensity: [f64; 2],
    pub brightness_gain: [f64; 2],
    /// When false, every episode uses the default appearance.
    pub appearance_randomization: bool,
}

impl Default for RandomizationSpec {
    fn default() -> Self {
        Self {
            lateral_mean: 0.90,
            lateral_span: 0.03,
            longitudinal_span: 0.03,
            yaw_span: 1.00,
            base_y_nominal: 0.45,
            door_intensity: [0.2, 0.95],
            handle_intensity: [0.2, 0.95],
            background_intensity: [0.0, 0.4],
            brightness_gain: [0.8, 1.2],
            appearance_randomization: true,
        }
    }
}

impl RandomizationSpec {
    pub fn sample_init_pose(&self, rng: &mut impl Rng) -> Pose {
        let lateral = self.lateral_mean + rng.random_range(-self.lateral_span..=self.lateral_span);
        let long = rng.random_range(-self.longitudinal_span..=self.longitudinal_span);
        let yaw = rng.random_range(-self.yaw_span..=self.yaw_span);
        Pose::new(-lateral, self.base_y_nominal + long, yaw)
    }

    pub fn sample_appearance(&self, rng: &mut impl Rng) -> AppearanceSpec {
        if !self.appearance_randomization {
            return AppearanceSpec::default();
        }
        let mut pick = |r: [f64; 2]| rng.random_range(r[0]..=r[1]);
        AppearanceSpec {
            door_intensity: pick(self.door_intensity),
            handle_intensity: pick(self.handle_intensity),
            background_intensity: pick(self.background_intensity),
            brightness_gain: pick(self.brightness_gain),
        }
    }
}

/// Per-dimension min/max over proprio and actions; degenerate dimensions are
/// widened by ε so normalization never divides by zero.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct NormStats {
    pub proprio_min: Vec<f32>,
    pub proprio_max: Vec<f32>,
    pub action_min: Vec<f32>,
    pub action_max: Vec<f32>,
}

const STATS_EPS: f32 = 1e-6;

impl NormStats {
    pub fn compute(episodes: &[Episode]) -> Self {
        let mut s = Self {
            proprio_min: vec![f32::INFINITY; PROPRIO_DIM],
            proprio_max: vec![f32::NEG_INFINITY; PROPRIO_DIM],
            action_min: vec![f32::INFINITY; ACTION_DIM],
            action_max: vec![f32::NEG_INFINITY; ACTION_DIM],
        };
        for ep in episodes {
            for row in ep.proprio.chunks_exact(PROPRIO_DIM) {
                for (d, &v) in row.iter().enumerate() {
                    s.proprio_min[d] = s.proprio_min[d].min(v);
                    s.proprio_max[d] = s.proprio_max[d].max(v);
                }
            }
            for row in ep.actions.chunks_exact(ACTION_DIM) {
                for (d, &v) in row.iter().enumerate() {
                    s.action_min[d] = s.action_min[d].min(v);
                    s.action_max[d] = s.action_max[d].max(v);
                }
            }
        }
        for (lo, hi) in s
            .proprio_min
            .iter_mut()
            .zip(s.proprio_max.iter_mut())
            .chain(s.action_min.iter_mut().zip(s.action_max.iter_mut()))
        {
            if *hi - *lo < STATS_EPS {
                *hi = *lo + STATS_EPS;
            }
        }
        s
    }
}

/// Episode metadata stored in each dataset chunk.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EpisodeMeta {
    pub seed: u64,
    pub init_pose: Pose,
    pub appearance: AppearanceSpec,
    pub success: bool,
}

/// One recorded trajectory: per step a proprio vector, three rasters and the
/// applied action, all row-major contiguous.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub meta: EpisodeMeta,
    /// T × 11
    pub proprio: Vec<f32>,
    /// T × 3 × 32 × 32
    pub rasters: Vec<f32>,
    /// T × 10
    pub actions: Vec<f32>,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.proprio.len() / PROPRIO_DIM
    }

    pub fn is_empty(&self) -> bool {
        self.proprio.is_empty()
    }

    pub fn proprio_at(&self, t: usize) -> &[f32] {
        &self.proprio[t * PROPRIO_DIM..(t + 1) * PROPRIO_DIM]
    }

    pub fn rasters_at(&self, t: usize) -> &[f32] {
        &self.rasters[t * RASTER_LEN..(t + 1) * RASTER_LEN]
    }

    pub fn action_at(&self, t: usize) -> &[f32] {
        &self.actions[t * ACTION_DIM..(t + 1) * ACTION_DIM]
    }
}

/// Manifest stored as UTF-8 TOML inside the dataset file.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub proprio_dim: u32,
    pub action_dim: u32,
    pub views: u32,
    pub raster_size: u32,
    pub episodes: u64,
    pub total_steps: u64,
    pub master_seed: u64,
    pub policy_subsample: u32,
    /// Hash of the world + randomization spec the data was collected under.
    pub spec_hash: String,
    pub stats: NormStats,
}

/// In-memory dataset: manifest plus all episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct DemoDataset {
    pub manifest: DatasetManifest,
    pub episodes: Vec<Episode>,
}

impl DemoDataset {
    /// Check collection invariants: all successful, lengths in range,
    /// stats consistent with manifest dims.
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.manifest.proprio_dim as usize != PROPRIO_DIM
            || self.manifest.action_dim as usize != ACTION_DIM
        {
            return Err(DatasetError::Invariant("dimension mismatch".into()));
        }
        for (i, ep) in self.episodes.iter().enumerate() {
            if !ep.meta.success {
                return Err(DatasetError::Invariant(format!("episode {i} not successful")));
            }
            let t = ep.len();
            if !(100..=1500).contains(&t) {
                return Err(DatasetError::Invariant(format!(
                    "episode {i} length {t} outside [100, 1500]"
                )));
            }
            if ep.rasters.len() != t * RASTER_LEN || ep.actions.len() != t * ACTION_DIM {
                return Err(DatasetError::Invariant(format!("episode {i} ragged arrays")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sampled_values_stay_inside_declared_ranges() {
        let spec = RandomizationSpec::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let p = spec.sample_init_pose(&mut rng);
            assert!((-0.93..=-0.87).contains(&p.x), "lateral {}", p.x);
            assert!((0.42..=0.48).contains(&p.y), "longitudinal {}", p.y);
            assert!((-1.0..=1.0).contains(&p.yaw), "yaw {}", p.yaw);
            let a = spec.sample_appearance(&mut rng);
            assert!((0.2..=0.95).contains(&a.door_intensity));
            assert!((0.2..=0.95).contains(&a.handle_intensity));
            assert!((0.0..=0.4).contains(&a.background_intensity));
            assert!((0.8..=1.2).contains(&a.brightness_gain));
        }
    }

    #[test]
    fn randomization_off_fixes_appearance() {
        let spec = RandomizationSpec {
            appearance_randomization: false,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(spec.sample_appearance(&mut rng), AppearanceSpec::default());
    }

    #[test]
    fn degenerate_stat_dims_are_widened() {
        let ep = Episode {
            meta: EpisodeMeta {
                seed: 0,
                init_pose: Pose::default(),
                appearance: AppearanceSpec::default(),
                success: true,
            },
            proprio: vec![0.5; 2 * PROPRIO_DIM],
            rasters: vec![0.0; 2 * RASTER_LEN],
            actions: vec![-0.25; 2 * ACTION_DIM],
        };
        let stats = NormStats::compute(&[ep]);
        for d in 0..PROPRIO_DIM {
            assert!(stats.proprio_max[d] > stats.proprio_min[d]);
        }
        for d in 0..ACTION_DIM {
            assert!(stats.action_max[d] > stats.action_min[d]);
        }
    }
}
