//! Layer building blocks: parameter registration plus graph wiring. Layers
//! hold `ParamId`s only, so the same definitions run in 32- and 64-bit.

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::numerics::{Graph, ParamId, ParamStore, Scalar, Src, Tensor};

use super::DiffusionError;

pub(crate) fn he_init<T: Scalar>(
    rng: &mut ChaCha8Rng,
    shape: Vec<usize>,
    fan_in: usize,
) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| {
        let z: f64 = StandardNormal.sample(rng);
        T::from_f64(z * std)
    })
}

#[derive(Clone, Copy, Debug)]
pub struct ConvLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub padding: usize,
}

impl ConvLayer {
    /// 1-D convolution over (c_in, t, batch).
    pub fn conv1d<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self, DiffusionError> {
        let w = store.register(&format!("{name}.w"), he_init(rng, vec![c_out, c_in, k], c_in * k))?;
        let b = store.register(&format!("{name}.b"), Tensor::zeros(vec![c_out]))?;
        Ok(Self { w, b, stride, padding })
    }

    /// 2-D convolution over (c_in, h, w, batch).
    pub fn conv2d<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Result<Self, DiffusionError> {
        let w = store.register(
            &format!("{name}.w"),
            he_init(rng, vec![c_out, c_in, k, k], c_in * k * k),
        )?;
        let b = store.register(&format!("{name}.b"), Tensor::zeros(vec![c_out]))?;
        Ok(Self { w, b, stride, padding })
    }

    /// Zero-initialized 1-D convolution (used for the output head so an
    /// untrained predictor emits exactly zero).
    pub fn conv1d_zero<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        padding: usize,
    ) -> Result<Self, DiffusionError> {
        let w = store.register(&format!("{name}.w"), Tensor::zeros(vec![c_out, c_in, k]))?;
        let b = store.register(&format!("{name}.b"), Tensor::zeros(vec![c_out]))?;
        Ok(Self { w, b, stride: 1, padding })
    }

    pub fn apply1d<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Src) -> Result<Src, DiffusionError> {
        Ok(g.conv1d(x, self.w.into(), self.b.into(), self.stride, self.padding)?)
    }

    pub fn apply2d<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Src) -> Result<Src, DiffusionError> {
        Ok(g.conv2d(x, self.w.into(), self.b.into(), self.stride, self.padding)?)
    }
}

/// Fully connected layer, evaluated as a 1×1 convolution over (in, 1, batch).
#[derive(Clone, Copy, Debug)]
pub struct LinearLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub c_in: usize,
    pub c_out: usize,
}

impl LinearLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
    ) -> Result<Self, DiffusionError> {
        let w = store.register(&format!("{name}.w"), he_init(rng, vec![c_out, c_in, 1], c_in))?;
        let b = store.register(&format!("{name}.b"), Tensor::zeros(vec![c_out]))?;
        Ok(Self { w, b, c_in, c_out })
    }

    /// FiLM generator initialization: small weights, bias fixed so the scale
    /// half starts at 1 and the shift half at 0 (identity modulation).
    pub fn new_film<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        channels: usize,
    ) -> Result<Self, DiffusionError> {
        let c_out = 2 * channels;
        let w = store.register(
            &format!("{name}.w"),
            Tensor::from_fn(vec![c_out, c_in, 1], |_| {
                let z: f64 = StandardNormal.sample(rng);
                T::from_f64(z * 0.02)
            }),
        )?;
        let b = store.register(
            &format!("{name}.b"),
            Tensor::from_fn(vec![c_out], |i| if i < channels { T::one() } else { T::zero() }),
        )?;
        Ok(Self { w, b, c_in, c_out })
    }

    /// x (c_in, batch) → (c_out, batch)
    pub fn apply<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Src) -> Result<Src, DiffusionError> {
        let b = g.value(x).shape()[1];
        let x3 = g.reshape(x, vec![self.c_in, 1, b])?;
        let y = g.conv1d(x3, self.w.into(), self.b.into(), 1, 0)?;
        Ok(g.reshape(y, vec![self.c_out, b])?)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GroupNormLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl GroupNormLayer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        groups: usize,
    ) -> Result<Self, DiffusionError> {
        let gamma = store.register(
            &format!("{name}.g"),
            Tensor::from_fn(vec![channels], |_| T::one()),
        )?;
        let beta = store.register(&format!("{name}.b"), Tensor::zeros(vec![channels]))?;
        Ok(Self { gamma, beta, groups })
    }

    pub fn apply<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Src) -> Result<Src, DiffusionError> {
        Ok(g.group_norm(x, self.gamma.into(), self.beta.into(), self.groups)?)
    }
}

/// Sinusoidal embedding of a denoising step index (half sines, half
/// cosines over a geometric frequency ladder).
pub fn sinusoidal_embedding(k: usize, dim: usize) -> Vec<f32> {
    debug_assert!(dim % 2 == 0);
    let half = dim / 2;
    let mut out = vec![0.0f32; dim];
    for i in 0..half {
        let freq = (-(i as f64) * (10_000.0f64).ln() / (half as f64 - 1.0).max(1.0)).exp();
        let arg = k as f64 * freq;
        out[i] = arg.sin() as f32;
        out[half + i] = arg.cos() as f32;
    }
    out
}
