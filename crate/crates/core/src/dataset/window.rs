//! Normalization and the (observation window, action block) sampler.

use crate::worldsim::{ACTION_DIM, PROPRIO_DIM};

use super::{Episode, NormStats, POLICY_SUBSAMPLE, RASTER_LEN};

/// Min/max normalization to [−1, 1] with clamping (out-of-range inputs are
/// counted, not rejected).
#[derive(Debug)]
pub struct Normalizer {
    pub stats: NormStats,
    clamped: std::sync::atomic::AtomicU64,
}

impl Clone for Normalizer {
    fn clone(&self) -> Self {
        Self {
            stats: self.stats.clone(),
            clamped: std::sync::atomic::AtomicU64::new(self.clamp_count()),
        }
    }
}

impl Normalizer {
    pub fn new(stats: NormStats) -> Self {
        Self {
            stats,
            clamped: std::sync::atomic::AtomicU64::new(0),
        }
    }

    pub fn clamp_count(&self) -> u64 {
        self.clamped.load(std::sync::atomic::Ordering::Relaxed)
    }

    #[inline]
    fn norm_one(&self, x: f32, lo: f32, hi: f32) -> f32 {
        let y = 2.0 * (x - lo) / (hi - lo) - 1.0;
        if !(-1.0..=1.0).contains(&y) {
            self.clamped.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        }
        y.clamp(-1.0, 1.0)
    }

    pub fn normalize_proprio(&self, x: &[f32], out: &mut [f32]) {
        debug_assert_eq!(x.len() % PROPRIO_DIM, 0);
        for (row_in, row_out) in x.chunks_exact(PROPRIO_DIM).zip(out.chunks_exact_mut(PROPRIO_DIM)) {
            for d in 0..PROPRIO_DIM {
                row_out[d] = self.norm_one(row_in[d], self.stats.proprio_min[d], self.stats.proprio_max[d]);
            }
        }
    }

    pub fn normalize_actions(&self, x: &[f32], out: &mut [f32]) {
        debug_assert_eq!(x.len() % ACTION_DIM, 0);
        for (row_in, row_out) in x.chunks_exact(ACTION_DIM).zip(out.chunks_exact_mut(ACTION_DIM)) {
            for d in 0..ACTION_DIM {
                row_out[d] = self.norm_one(row_in[d], self.stats.action_min[d], self.stats.action_max[d]);
            }
        }
    }

    /// Inverse map for one action row; the inverse of `normalize` up to the
    /// clamp.
    pub fn denormalize_action(&self, x: &[f32], out: &mut [f64]) {
        debug_assert_eq!(x.len(), ACTION_DIM);
        for d in 0..ACTION_DIM {
            let (lo, hi) = (self.stats.action_min[d] as f64, self.stats.action_max[d] as f64);
            out[d] = (x[d] as f64 + 1.0) / 2.0 * (hi - lo) + lo;
        }
    }
}

/// Policy-rate view of an episode: every `POLICY_SUBSAMPLE`-th frame.
#[derive(Clone, Copy)]
pub struct EpisodeView<'a> {
    ep: &'a Episode,
    len: usize,
}

impl<'a> EpisodeView<'a> {
    pub fn new(ep: &'a Episode) -> Self {
        let len = ep.len().div_ceil(POLICY_SUBSAMPLE);
        Self { ep, len }
    }

    /// Number of policy-rate frames.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn raw(&self, t: usize) -> usize {
        t * POLICY_SUBSAMPLE
    }

    pub fn proprio_at(&self, t: usize) -> &[f32] {
        self.ep.proprio_at(self.raw(t))
    }

    pub fn rasters_at(&self, t: usize) -> &[f32] {
        self.ep.rasters_at(self.raw(t))
    }

    pub fn action_at(&self, t: usize) -> &[f32] {
        self.ep.action_at(self.raw(t))
    }
}

/// One training pair: a stacked observation block and the normalized action
/// target block.
#[derive(Clone, Debug)]
pub struct WindowSample {
    /// T_o × 11, normalized to [−1, 1].
    pub obs_proprio: Vec<f32>,
    /// T_o × 3 × 32 × 32, raw raster values in [0, 1].
    pub obs_rasters: Vec<f32>,
    /// T_p × 10, normalized to [−1, 1].
    pub actions: Vec<f32>,
}

/// Extract a window at policy-rate frame `t`: observations t−T_o+1…t with
/// repeat-first padding, action targets t…t+T_p−1 with repeat-last padding.
pub fn sample_window(
    view: &EpisodeView<'_>,
    t: usize,
    t_o: usize,
    t_p: usize,
    norm: &Normalizer,
) -> WindowSample {
    assert!(t < view.len(), "t {} out of range {}", t, view.len());
    let mut obs_proprio = vec![0.0f32; t_o * PROPRIO_DIM];
    let mut obs_rasters = vec![0.0f32; t_o * RASTER_LEN];
    for k in 0..t_o {
        let idx = (t + k + 1).saturating_sub(t_o).min(view.len() - 1);
        norm.normalize_proprio(
            view.proprio_at(idx),
            &mut obs_proprio[k * PROPRIO_DIM..(k + 1) * PROPRIO_DIM],
        );
        obs_rasters[k * RASTER_LEN..(k + 1) * RASTER_LEN].copy_from_slice(view.rasters_at(idx));
    }
    let mut actions = vec![0.0f32; t_p * ACTION_DIM];
    for k in 0..t_p {
        let idx = (t + k).min(view.len() - 1);
        norm.normalize_actions(
            view.action_at(idx),
            &mut actions[k * ACTION_DIM..(k + 1) * ACTION_DIM],
        );
    }
    WindowSample {
        obs_proprio,
        obs_rasters,
        actions,
    }
}
