//! Forward corruption and reverse-process sampling.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::numerics::{Graph, ParamStore, Tensor};

use super::layers::sinusoidal_embedding;
use super::schedule::NoiseSchedule;
use super::unet::NoisePredictor;
use super::DiffusionError;

/// Aᵏ = √ā_k·A⁰ + √(1−ā_k)·ε, elementwise over the flat action block.
pub fn q_sample(a0: &[f32], k: usize, eps: &[f32], schedule: &NoiseSchedule) -> Vec<f32> {
    debug_assert_eq!(a0.len(), eps.len());
    let (sa, se) = schedule.q_coeffs(k);
    let (sa, se) = (sa as f32, se as f32);
    a0.iter().zip(eps).map(|(&a, &e)| sa * a + se * e).collect()
}

fn predict(
    predictor: &NoisePredictor,
    store: &ParamStore<f32>,
    actions: &[f32],
    obs_flat: &[f32],
    k: usize,
) -> Result<Vec<f32>, DiffusionError> {
    let dims = &predictor.dims;
    let g = &mut Graph::new(store);
    let a = g.input(Tensor::new(vec![dims.action_dim, dims.horizon, 1], actions.to_vec())?);
    let o = g.input(Tensor::new(vec![dims.obs_dim, 1], obs_flat.to_vec())?);
    let k_emb = sinusoidal_embedding(k, dims.step_sin);
    let ks = g.input(Tensor::new(vec![dims.step_sin, 1], k_emb)?);
    let out = predictor.forward(g, a, o, ks)?;
    Ok(g.value(out).data().to_vec())
}

/// Run the reverse process from Aᴷ ~ N(0, I) down to A⁰ for a single
/// observation window, returning the flat (d_a, T_p) block clamped to
/// [−1, 1] plus the number of predictor evaluations.
///
/// With `k_infer == k_train` this is ancestral DDPM (noise injected after
/// the scaling, none on the final step); with fewer steps it runs the
/// deterministic strided (η = 0) update over an evenly spaced subset.
pub fn sample_actions(
    predictor: &NoisePredictor,
    store: &ParamStore<f32>,
    obs_flat: &[f32],
    schedule: &NoiseSchedule,
    k_infer: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(Vec<f32>, usize), DiffusionError> {
    let dims = &predictor.dims;
    let n = dims.action_dim * dims.horizon;
    let mut a: Vec<f32> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z as f32
        })
        .collect();
    let mut evals = 0usize;

    if k_infer == schedule.k_train() {
        for k in (1..=schedule.k_train()).rev() {
            let eps_hat = predict(predictor, store, &a, obs_flat, k)?;
            evals += 1;
            let c = schedule.ancestral_coeffs(k);
            let (alpha, gamma, sigma) = (c.alpha as f32, c.gamma as f32, c.sigma as f32);
            for (av, &ev) in a.iter_mut().zip(&eps_hat) {
                *av = alpha * (*av - gamma * ev);
            }
            if sigma > 0.0 {
                for av in a.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *av += sigma * z as f32;
                }
            }
        }
    } else {
        let steps = schedule.strided_steps(k_infer);
        for (i, &k) in steps.iter().enumerate() {
            let k_prev = if i + 1 < steps.len() { steps[i + 1] } else { 0 };
            let eps_hat = predict(predictor, store, &a, obs_flat, k)?;
            evals += 1;
            let c = schedule.strided_coeffs(k, k_prev);
            let (alpha, gamma) = (c.alpha as f32, c.gamma as f32);
            for (av, &ev) in a.iter_mut().zip(&eps_hat) {
                *av = alpha * (*av - gamma * ev);
            }
        }
    }
    for v in a.iter_mut() {
        *v = v.clamp(-1.0, 1.0);
    }
    Ok((a, evals))
}
