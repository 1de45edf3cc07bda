//! The diffusion visuomotor policy: view encoders, FiLM-conditioned 1-D
//! U-Net noise predictor, DDPM training, ancestral/strided sampling, and
//! receding-horizon execution.

mod encoder;
mod layers;
mod rollout;
mod sample;
mod schedule;
mod train;
mod unet;

pub use encoder::{EncoderDims, EncoderMode, EncoderSet};
pub use layers::sinusoidal_embedding;
pub use rollout::{run_policy_episode, EpisodeOutcome, ObsFrame, RolloutOptions, RolloutPolicy};
pub use sample::{q_sample, sample_actions};
pub use schedule::{NoiseSchedule, StepCoeffs};
pub use train::{toy_bimodal, train_door_policy, TrainProgress, Trainer};
pub use unet::{NoisePredictor, UnetDims};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::dataset::{NormStats, Normalizer, VIEWS};
use crate::numerics::{read_checkpoint, write_checkpoint, Graph, ParamStore, Src, Tensor};
use crate::worldsim::{PROPRIO_DIM, RASTER_SIZE};
use rand::SeedableRng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("numerics: {0}")]
    Numerics(#[from] crate::numerics::NumericsError),
    #[error("schedule: {0}")]
    Schedule(String),
    #[error("config: {0}")]
    Config(String),
    #[error("training divergence at step {step} (batch seed {batch_seed}): loss {loss}")]
    Divergence { step: u64, batch_seed: u64, loss: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Policy hyperparameters. Defaults: T_o = 3 stacked observations, T_p = 16
/// predicted actions with T_a = 8 executed per replan, 100 forward diffusion
/// steps.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub t_o: usize,
    pub t_p: usize,
    pub t_a: usize,
    pub k_train: usize,
    pub k_infer: usize,
    pub d_cam: usize,
    pub encoder_mode: EncoderMode,
    pub batch: usize,
    pub train_steps: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub ema_decay: f64,
    pub ema_enabled: bool,
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            t_o: 3,
            t_p: 16,
            t_a: 8,
            k_train: 100,
            k_infer: 100,
            d_cam: 64,
            encoder_mode: EncoderMode::Separate,
            batch: 64,
            train_steps: 20_000,
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            ema_decay: 0.999,
            ema_enabled: true,
            checkpoint_every: 2_000,
            seed: 0,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), DiffusionError> {
        if self.t_a == 0 || self.t_a > self.t_p {
            return Err(DiffusionError::Config(format!(
                "t_a {} must lie in [1, t_p = {}]",
                self.t_a, self.t_p
            )));
        }
        if self.k_infer == 0 || self.k_infer > self.k_train {
            return Err(DiffusionError::Config(format!(
                "k_infer {} must lie in [1, k_train = {}]",
                self.k_infer, self.k_train
            )));
        }
        if self.batch == 0 {
            return Err(DiffusionError::Config("batch must be >= 1".into()));
        }
        Ok(())
    }

    /// Observation dimension d_o = views·d_cam + proprio.
    pub fn d_o(&self) -> usize {
        VIEWS * self.d_cam + PROPRIO_DIM
    }

    pub fn adam(&self) -> crate::numerics::AdamConfig {
        crate::numerics::AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// Sidecar manifest written next to each checkpoint.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CheckpointManifest {
    pub config: PolicyConfig,
    pub stats_hash: String,
    pub train_steps_done: u64,
    pub param_count: usize,
}

/// A trained (or fresh) policy: parameters, nets, schedule and the
/// normalization statistics it was trained under.
pub struct DiffusionPolicy {
    pub config: PolicyConfig,
    pub store: ParamStore<f32>,
    pub encoders: EncoderSet,
    pub predictor: NoisePredictor,
    pub schedule: NoiseSchedule,
    pub normalizer: Normalizer,
    pub train_steps_done: u64,
}

impl DiffusionPolicy {
    /// Build a freshly initialized policy. Parameter count is logged once.
    pub fn new(config: PolicyConfig, stats: NormStats) -> Result<Self, DiffusionError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x9e37_79b9_7f4a_7c15);
        let enc_dims = EncoderDims {
            raster: RASTER_SIZE,
            channels: [8, 16, 32],
            d_cam: config.d_cam,
        };
        let encoders = EncoderSet::build(&mut store, &mut rng, config.encoder_mode, enc_dims, VIEWS)?;
        let unet_dims = UnetDims::door_policy(config.t_o * config.d_o(), crate::worldsim::ACTION_DIM, config.t_p);
        let predictor = NoisePredictor::build(&mut store, &mut rng, unet_dims)?;
        let schedule = NoiseSchedule::squared_cosine(config.k_train)?;
        log::info!(
            "diffusion policy: {} parameters ({} tensors), encoder mode {:?}",
            store.numel(),
            store.len(),
            config.encoder_mode
        );
        Ok(Self {
            config,
            store,
            encoders,
            predictor,
            schedule,
            normalizer: Normalizer::new(stats),
            train_steps_done: 0,
        })
    }

    /// Encode one observation frame: three rasters (each (1,S,S,B)) plus the
    /// normalized proprio (11,B), concatenated as [z¹, z², z³, s].
    pub fn encode_frame(
        &self,
        g: &mut Graph<'_, f32>,
        rasters: [Src; VIEWS],
        proprio: Src,
    ) -> Result<Src, DiffusionError> {
        let mut parts = Vec::with_capacity(VIEWS + 1);
        for (v, &r) in rasters.iter().enumerate() {
            parts.push(self.encoders.encode_view(g, v, r)?);
        }
        parts.push(proprio);
        Ok(g.concat(&parts)?)
    }

    fn stats_tensors(&self) -> Vec<(String, Tensor<f32>)> {
        let s = &self.normalizer.stats;
        [
            ("norm.proprio_min", &s.proprio_min),
            ("norm.proprio_max", &s.proprio_max),
            ("norm.action_min", &s.action_min),
            ("norm.action_max", &s.action_max),
        ]
        .into_iter()
        .map(|(n, v)| {
            (
                n.to_string(),
                Tensor::new(vec![v.len()], v.clone()).expect("stats tensor"),
            )
        })
        .collect()
    }

    fn stats_hash(stats: &NormStats) -> String {
        let text = serde_json::to_string(stats).expect("stats serialize");
        crate::util::sha256_hex(text.as_bytes())
    }

    /// Write `<base>.dpck` (parameters + normalization tensors) and
    /// `<base>.toml` (config, stats hash, step count).
    pub fn save(&self, base: &Path) -> Result<(), DiffusionError> {
        let dpck = base.with_extension("dpck");
        let stats = self.stats_tensors();
        let entries: Vec<(String, Tensor<f32>)> = self
            .store
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .chain(stats)
            .collect();
        write_checkpoint(&dpck, entries.iter().map(|(n, t)| (n.as_str(), t)))?;
        let manifest = CheckpointManifest {
            config: self.config.clone(),
            stats_hash: Self::stats_hash(&self.normalizer.stats),
            train_steps_done: self.train_steps_done,
            param_count: self.store.numel(),
        };
        let text = toml::to_string(&manifest).map_err(|e| DiffusionError::Checkpoint(e.to_string()))?;
        std::fs::write(base.with_extension("toml"), text)?;
        Ok(())
    }

    /// Load `<base>.dpck` + `<base>.toml`, verifying that every parameter in
    /// the freshly-built policy is present with the stored shape and that the
    /// stats hash matches.
    pub fn load(base: &Path) -> Result<Self, DiffusionError> {
        let manifest_text = std::fs::read_to_string(base.with_extension("toml"))?;
        let manifest: CheckpointManifest = toml::from_str(&manifest_text)
            .map_err(|e| DiffusionError::Checkpoint(format!("manifest: {e}")))?;
        let tensors = read_checkpoint(&base.with_extension("dpck"))?;
        let lookup: std::collections::BTreeMap<&str, &Tensor<f32>> =
            tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let stat = |name: &str| -> Result<Vec<f32>, DiffusionError> {
            lookup
                .get(name)
                .map(|t| t.data().to_vec())
                .ok_or_else(|| DiffusionError::Checkpoint(format!("missing `{name}`")))
        };
        let stats = NormStats {
            proprio_min: stat("norm.proprio_min")?,
            proprio_max: stat("norm.proprio_max")?,
            action_min: stat("norm.action_min")?,
            action_max: stat("norm.action_max")?,
        };
        if Self::stats_hash(&stats) != manifest.stats_hash {
            return Err(DiffusionError::Checkpoint(
                "stats hash mismatch between .dpck and manifest".into(),
            ));
        }
        let mut policy = Self::new(manifest.config, stats)?;
        for i in 0..policy.store.len() {
            let name = policy.store.iter().nth(i).map(|(n, _)| n.to_string()).unwrap();
            let stored = lookup
                .get(name.as_str())
                .ok_or_else(|| DiffusionError::Checkpoint(format!("missing parameter `{name}`")))?;
            let id = policy.store.lookup(&name).unwrap();
            if policy.store.get(id).shape() != stored.shape() {
                return Err(DiffusionError::Checkpoint(format!(
                    "shape mismatch for `{name}`: checkpoint {:?} vs model {:?}",
                    stored.shape(),
                    policy.store.get(id).shape()
                )));
            }
            *policy.store.get_mut(id) = (*stored).clone();
        }
        policy.train_steps_done = manifest.train_steps_done;
        Ok(policy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn small_stats() -> NormStats {
        NormStats {
            proprio_min: vec![-1.0; PROPRIO_DIM],
            proprio_max: vec![1.0; PROPRIO_DIM],
            action_min: vec![-1.0; crate::worldsim::ACTION_DIM],
            action_max: vec![1.0; crate::worldsim::ACTION_DIM],
        }
    }

    #[test]
    fn encode_frame_has_the_documented_dimension() {
        let policy = DiffusionPolicy::new(PolicyConfig::default(), small_stats()).unwrap();
        assert_eq!(policy.config.d_o(), 3 * 64 + 11);
        let g = &mut Graph::new(&policy.store);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rasters = [
            g.input(Tensor::from_fn(vec![1, 32, 32, 2], |_| rng.random_range(0.0..1.0))),
            g.input(Tensor::from_fn(vec![1, 32, 32, 2], |_| rng.random_range(0.0..1.0))),
            g.input(Tensor::from_fn(vec![1, 32, 32, 2], |_| rng.random_range(0.0..1.0))),
        ];
        let proprio = g.input(Tensor::from_fn(vec![PROPRIO_DIM, 2], |_| rng.random_range(-1.0..1.0)));
        let o = policy.encode_frame(g, rasters, proprio).unwrap();
        assert_eq!(g.value(o).shape(), &[203, 2]);
    }

    #[test]
    fn save_load_round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("ckpt");
        let mut policy = DiffusionPolicy::new(
            PolicyConfig {
                t_p: 8,
                t_a: 4,
                k_train: 10,
                k_infer: 10,
                ..Default::default()
            },
            small_stats(),
        )
        .unwrap();
        policy.train_steps_done = 42;
        policy.save(&base).unwrap();
        let loaded = DiffusionPolicy::load(&base).unwrap();
        assert_eq!(loaded.train_steps_done, 42);
        assert_eq!(loaded.config, policy.config);
        for ((na, ta), (nb, tb)) in policy.store.iter().zip(loaded.store.iter()) {
            assert_eq!(na, nb);
            assert_eq!(ta, tb);
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(PolicyConfig { t_a: 17, ..Default::default() }.validate().is_err());
        assert!(PolicyConfig { k_infer: 101, ..Default::default() }.validate().is_err());
        assert!(PolicyConfig { t_a: 16, ..Default::default() }.validate().is_ok());
    }
}
