//! Expert demonstration collection with per-slot retry.
//!
//! Slot `i`'s attempt `a` derives its seed from (master, i, a), so slots are
//! independent and the whole collection is reproducible regardless of retry
//! patterns or parallel scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::expert::{Expert, ExpertConfig};
use crate::util::mix_seed;
use crate::worldsim::{render_views, World, WorldSpec};

use super::{
    DatasetError, DatasetManifest, DemoDataset, Episode, EpisodeMeta, NormStats, RandomizationSpec,
    POLICY_SUBSAMPLE,
};

const SEED_STREAM_COLLECT: u64 = 1;
const MAX_ATTEMPTS_PER_SLOT: usize = 20;

#[derive(Clone, Copy, Debug)]
pub struct CollectSummary {
    pub episodes: usize,
    pub total_steps: usize,
    pub retries: usize,
    pub mean_len: f64,
}

/// Run one expert episode from a derived seed; returns the episode when the
/// rollout succeeds within the episode length bounds.
fn attempt_episode(
    spec: &WorldSpec,
    rand_spec: &RandomizationSpec,
    seed: u64,
) -> Result<Episode, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init_pose = rand_spec.sample_init_pose(&mut rng);
    let appearance = rand_spec.sample_appearance(&mut rng);
    let mut world = World::new(spec.clone(), init_pose).map_err(|e| e.to_string())?;
    let mut expert = Expert::new(ExpertConfig::default());
    let mut proprio = Vec::new();
    let mut rasters = Vec::new();
    let mut actions = Vec::new();
    while world.state.t < spec.time_limit && !world.state.crossed {
        let action = expert.step(spec, &world.state).map_err(|e| e.to_string())?;
        proprio.extend(world.state.proprio().iter().map(|&v| v as f32));
        for view in render_views(spec, &world.state, &appearance) {
            rasters.extend_from_slice(&view);
        }
        actions.extend(action.to_vec().iter().map(|&v| v as f32));
        world.step(&action).map_err(|e| e.to_string())?;
        if world.state.collided {
            return Err("collision".into());
        }
    }
    if !world.success() {
        return Err("timeout".into());
    }
    let len = proprio.len() / crate::worldsim::PROPRIO_DIM;
    if !(100..=1500).contains(&len) {
        return Err(format!("length {len} outside [100, 1500]"));
    }
    Ok(Episode {
        meta: EpisodeMeta {
            seed,
            init_pose,
            appearance,
            success: true,
        },
        proprio,
        rasters,
        actions,
    })
}

fn collect_slot(
    spec: &WorldSpec,
    rand_spec: &RandomizationSpec,
    master_seed: u64,
    slot: usize,
) -> Result<(Episode, usize), DatasetError> {
    let mut last = String::new();
    for attempt in 0..MAX_ATTEMPTS_PER_SLOT {
        let seed = mix_seed(master_seed, SEED_STREAM_COLLECT, (slot * 1024 + attempt) as u64);
        match attempt_episode(spec, rand_spec, seed) {
            Ok(ep) => return Ok((ep, attempt)),
            Err(e) => last = e,
        }
    }
    Err(DatasetError::SlotExhausted {
        slot,
        attempts: MAX_ATTEMPTS_PER_SLOT,
        last,
    })
}

/// Collect `n` successful expert episodes under the randomization spec.
/// Failed attempts are retried on fresh derived seeds; the result is
/// byte-reproducible for a fixed (spec, randomization, n, master_seed).
pub fn collect_demos(
    n: usize,
    master_seed: u64,
    spec: &WorldSpec,
    rand_spec: &RandomizationSpec,
) -> Result<(DemoDataset, CollectSummary), DatasetError> {
    assert!(n >= 1, "n must be >= 1");
    let results: Vec<Result<(Episode, usize), DatasetError>> =
        if crate::numerics::threads() > 1 {
            (0..n)
                .into_par_iter()
                .map(|slot| collect_slot(spec, rand_spec, master_seed, slot))
                .collect()
        } else {
            (0..n)
                .map(|slot| collect_slot(spec, rand_spec, master_seed, slot))
                .collect()
        };

    let mut episodes = Vec::with_capacity(n);
    let mut retries = 0;
    for r in results {
        let (ep, attempts) = r?;
        retries += attempts;
        episodes.push(ep);
    }
    let attempts = n + retries;
    if episodes.len() * 2 < attempts {
        return Err(DatasetError::Misconfigured {
            successes: episodes.len(),
            attempts,
        });
    }

    let total_steps: usize = episodes.iter().map(Episode::len).sum();
    let stats = NormStats::compute(&episodes);
    let spec_text = toml::to_string(spec).unwrap_or_default()
        + &toml::to_string(rand_spec).unwrap_or_default();
    let manifest = DatasetManifest {
        format_version: super::format::DATASET_VERSION,
        proprio_dim: crate::worldsim::PROPRIO_DIM as u32,
        action_dim: crate::worldsim::ACTION_DIM as u32,
        views: super::VIEWS as u32,
        raster_size: crate::worldsim::RASTER_SIZE as u32,
        episodes: episodes.len() as u64,
        total_steps: total_steps as u64,
        master_seed,
        policy_subsample: POLICY_SUBSAMPLE as u32,
        spec_hash: crate::util::sha256_hex(spec_text.as_bytes()),
        stats,
    };
    let summary = CollectSummary {
        episodes: episodes.len(),
        total_steps,
        retries,
        mean_len: total_steps as f64 / episodes.len() as f64,
    };
    Ok((DemoDataset { manifest, episodes }, summary))
}
