//! Squared-cosine noise schedule and reverse-step coefficients.
//!
//! Forward corruption: Aᵏ = √ā_k·A⁰ + √(1−ā_k)·ε with ā_k = Π(1−β_j).
//! The reverse update is the standard DDPM posterior written as
//!
//! ```text
//! A^{k−1} = α_k·(A^k − γ_k·ε̂) + σ_k·z
//! α_k = 1/√a_k,  γ_k = β_k/√(1−ā_k),  σ_k = √(β_k(1−ā_{k−1})/(1−ā_k))
//! ```
//!
//! (injected noise added after the scaling). Strided sampling over a subset
//! of timesteps reuses the same posterior-mean form with the coarsened
//! a_eff = ā_cur/ā_prev and no injected noise, so with the full timestep set
//! it reduces exactly to the deterministic ancestral limit.

use serde::{Deserialize, Serialize};

use super::DiffusionError;

/// Coefficients for one reverse step.
#[derive(Clone, Copy, Debug)]
pub struct StepCoeffs {
    pub alpha: f64,
    pub gamma: f64,
    pub sigma: f64,
}

/// Per-step diffusion coefficients for `k_train` forward steps.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct NoiseSchedule {
    k_train: usize,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Squared-cosine β schedule with the usual 0.008 offset, β clipped to
    /// 0.999.
    pub fn squared_cosine(k_train: usize) -> Result<Self, DiffusionError> {
        if k_train == 0 {
            return Err(DiffusionError::Schedule("k_train must be >= 1".into()));
        }
        let f = |u: f64| ((u + 0.008) / 1.008 * std::f64::consts::FRAC_PI_2).cos().powi(2);
        let f0 = f(0.0);
        let mut beta = Vec::with_capacity(k_train);
        let mut prev_bar = 1.0;
        for k in 1..=k_train {
            let bar = f(k as f64 / k_train as f64) / f0;
            let b = (1.0 - bar / prev_bar).clamp(1e-8, 0.999);
            beta.push(b);
            prev_bar = bar;
        }
        // recompute ā from the clipped β so the product identity holds exactly
        let mut alpha_bar = Vec::with_capacity(k_train);
        let mut acc = 1.0;
        for &b in &beta {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        let schedule = Self { k_train, beta, alpha_bar };
        schedule.validate()?;
        Ok(schedule)
    }

    fn validate(&self) -> Result<(), DiffusionError> {
        for (i, &b) in self.beta.iter().enumerate() {
            if !(0.0 < b && b < 1.0) || !b.is_finite() {
                return Err(DiffusionError::Schedule(format!("beta[{i}] = {b} out of (0,1)")));
            }
        }
        for w in self.alpha_bar.windows(2) {
            if !(w[1] < w[0]) {
                return Err(DiffusionError::Schedule("alpha_bar not strictly decreasing".into()));
            }
        }
        let terminal = *self.alpha_bar.last().unwrap();
        if !(terminal < 0.01) {
            return Err(DiffusionError::Schedule(format!(
                "terminal alpha_bar {terminal} >= 0.01: A^K is not close to a unit gaussian"
            )));
        }
        Ok(())
    }

    pub fn k_train(&self) -> usize {
        self.k_train
    }

    /// ā_k with ā_0 = 1.
    pub fn alpha_bar(&self, k: usize) -> f64 {
        if k == 0 {
            1.0
        } else {
            self.alpha_bar[k - 1]
        }
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.beta[k - 1]
    }

    /// (√ā_k, √(1−ā_k)) for the forward corruption.
    pub fn q_coeffs(&self, k: usize) -> (f64, f64) {
        let bar = self.alpha_bar(k);
        (bar.sqrt(), (1.0 - bar).sqrt())
    }

    /// Ancestral DDPM coefficients at step k (σ₁ = 0: the final step injects
    /// no noise).
    pub fn ancestral_coeffs(&self, k: usize) -> StepCoeffs {
        let b = self.beta(k);
        let a = 1.0 - b;
        let bar = self.alpha_bar(k);
        let bar_prev = self.alpha_bar(k - 1);
        StepCoeffs {
            alpha: 1.0 / a.sqrt(),
            gamma: b / (1.0 - bar).sqrt(),
            sigma: if k == 1 {
                0.0
            } else {
                (b * (1.0 - bar_prev) / (1.0 - bar)).sqrt()
            },
        }
    }

    /// Deterministic (η = 0) coefficients for a strided step k_cur → k_prev.
    pub fn strided_coeffs(&self, k_cur: usize, k_prev: usize) -> StepCoeffs {
        debug_assert!(k_prev < k_cur);
        let bar_cur = self.alpha_bar(k_cur);
        let bar_prev = self.alpha_bar(k_prev);
        let a_eff = bar_cur / bar_prev;
        StepCoeffs {
            alpha: 1.0 / a_eff.sqrt(),
            gamma: (1.0 - a_eff) / (1.0 - bar_cur).sqrt(),
            sigma: 0.0,
        }
    }

    /// Evenly spaced descending timestep subset for reduced-step inference,
    /// always including k_train and 1.
    pub fn strided_steps(&self, k_infer: usize) -> Vec<usize> {
        assert!(k_infer >= 1 && k_infer <= self.k_train);
        if k_infer == 1 {
            return vec![self.k_train];
        }
        let mut steps: Vec<usize> = (0..k_infer)
            .map(|i| {
                let f = self.k_train as f64
                    - i as f64 * (self.k_train as f64 - 1.0) / (k_infer as f64 - 1.0);
                f.round() as usize
            })
            .collect();
        steps.dedup();
        steps
    }
}
