use super::params::{Grads, ParamStore};
use super::tensor::{Scalar, Tensor};
use super::{NumericsError, Result};

/// Adam hyperparameters.
#[derive(Clone, Copy, Debug)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment accumulators per parameter plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub cfg: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(store: &ParamStore<T>, cfg: AdamConfig) -> Self {
        let zeros: Vec<_> = store
            .values()
            .iter()
            .map(|t| Tensor::zeros(t.shape().to_vec()))
            .collect();
        Self {
            cfg,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. Rejects non-finite gradients before any
/// state is touched, naming the offending parameter.
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &Grads<T>,
    state: &mut AdamState<T>,
) -> Result<()> {
    for (i, g) in grads.values.iter().enumerate() {
        if !g.all_finite() {
            return Err(NumericsError::NonFiniteGrad {
                name: params.iter().nth(i).map(|(n, _)| n.to_string()).unwrap_or_default(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let b1 = T::from_f64(state.cfg.beta1);
    let b2 = T::from_f64(state.cfg.beta2);
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    let lr = T::from_f64(state.cfg.lr);
    let eps = T::from_f64(state.cfg.eps);
    let one = T::one();
    for (i, p) in params.values_mut().iter_mut().enumerate() {
        let g = grads.values[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let pd = p.data_mut();
        for j in 0..g.len() {
            m[j] = b1 * m[j] + (one - b1) * g[j];
            v[j] = b2 * v[j] + (one - b2) * g[j] * g[j];
            let mhat = m[j] / bc1;
            let vhat = v[j] / bc2;
            pd[j] = pd[j] - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Exponential moving average of parameter values, used for evaluation.
#[derive(Clone, Debug)]
pub struct EmaState<T> {
    decay: T,
    shadow: Vec<Tensor<T>>,
}

impl<T: Scalar> EmaState<T> {
    pub fn new(store: &ParamStore<T>, decay: f64) -> Self {
        Self {
            decay: T::from_f64(decay),
            shadow: store.values().to_vec(),
        }
    }

    pub fn update(&mut self, store: &ParamStore<T>) {
        let d = self.decay;
        let one = T::one();
        for (s, p) in self.shadow.iter_mut().zip(store.values()) {
            let sd = s.data_mut();
            let pd = p.data();
            for j in 0..sd.len() {
                sd[j] = d * sd[j] + (one - d) * pd[j];
            }
        }
    }

    pub fn shadow(&self) -> &[Tensor<T>] {
        &self.shadow
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f64) -> (ParamStore<f64>, super::super::ParamId) {
        let mut s = ParamStore::new();
        let id = s.register("x", Tensor::scalar(x)).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let (mut store, id) = scalar_store(1.25);
        let grads = Grads::zeros_like(&store);
        let mut state = AdamState::new(&store, AdamConfig::default());
        for _ in 0..5 {
            adam_step(&mut store, &grads, &mut state).unwrap();
        }
        assert_eq!(store.get(id).item(), 1.25);
        assert_eq!(state.step_count(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let (mut store, id) = scalar_store(0.0);
        let mut grads = Grads::zeros_like(&store);
        grads.get_mut(id).data_mut()[0] = 1.0;
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut state = AdamState::new(&store, cfg);
        adam_step(&mut store, &grads, &mut state).unwrap();
        assert!((store.get(id).item() + 0.1).abs() < 1e-7);
    }

    #[test]
    fn ten_steps_on_quadratic_strictly_decrease_it() {
        let (mut store, id) = scalar_store(1.0);
        let cfg = AdamConfig { lr: 0.05, ..AdamConfig::default() };
        let mut state = AdamState::new(&store, cfg);
        let mut prev = store.get(id).item().powi(2);
        for _ in 0..10 {
            let mut grads = Grads::zeros_like(&store);
            grads.get_mut(id).data_mut()[0] = 2.0 * store.get(id).item();
            adam_step(&mut store, &grads, &mut state).unwrap();
            let f = store.get(id).item().powi(2);
            assert!(f < prev, "f={f} prev={prev}");
            prev = f;
        }
    }

    #[test]
    fn non_finite_gradient_reports_parameter_name() {
        let (mut store, id) = scalar_store(1.0);
        let mut grads = Grads::zeros_like(&store);
        grads.get_mut(id).data_mut()[0] = f64::NAN;
        let mut state = AdamState::new(&store, AdamConfig::default());
        let err = adam_step(&mut store, &grads, &mut state).unwrap_err();
        assert!(err.to_string().contains("`x`"), "{err}");
        assert_eq!(state.step_count(), 0);
    }

    #[test]
    fn ema_tracks_toward_current_weights() {
        let (mut store, id) = scalar_store(0.0);
        let mut ema = EmaState::new(&store, 0.9);
        store.get_mut(id).data_mut()[0] = 1.0;
        for _ in 0..50 {
            ema.update(&store);
        }
        let s = ema.shadow()[0].item();
        assert!(s > 0.99, "s={s}");
    }
}
