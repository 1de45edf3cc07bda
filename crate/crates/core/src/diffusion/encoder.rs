//! Raster view encoders: small strided conv stacks with leaky-rectifier
//! activations, one per camera view (separate mode) or shared (unified).

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{Graph, ParamStore, Scalar, Src};

use super::layers::{ConvLayer, LinearLayer};
use super::DiffusionError;

const LEAKY_SLOPE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    /// One weight set per camera view.
    Separate,
    /// All views share one weight set.
    Unified,
}

/// Encoder geometry; the door policy uses 32×32 rasters with a 64-d latent,
/// gradient-check tests shrink everything.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub raster: usize,
    pub channels: [usize; 3],
    pub d_cam: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        Self {
            raster: 32,
            channels: [8, 16, 32],
            d_cam: 64,
        }
    }
}

impl EncoderDims {
    fn final_spatial(&self) -> usize {
        // three stride-2 convs with k=3, p=1 halve the raster each time
        self.raster / 8
    }

    fn flat(&self) -> usize {
        self.channels[2] * self.final_spatial() * self.final_spatial()
    }
}

#[derive(Clone, Debug)]
struct ViewNet {
    conv1: ConvLayer,
    conv2: ConvLayer,
    conv3: ConvLayer,
    fc: LinearLayer,
}

impl ViewNet {
    fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        dims: &EncoderDims,
    ) -> Result<Self, DiffusionError> {
        let [c1, c2, c3] = dims.channels;
        Ok(Self {
            conv1: ConvLayer::conv2d(store, rng, &format!("{name}.conv1"), 1, c1, 3, 2, 1)?,
            conv2: ConvLayer::conv2d(store, rng, &format!("{name}.conv2"), c1, c2, 3, 2, 1)?,
            conv3: ConvLayer::conv2d(store, rng, &format!("{name}.conv3"), c2, c3, 3, 2, 1)?,
            fc: LinearLayer::new(store, rng, &format!("{name}.fc"), dims.flat(), dims.d_cam)?,
        })
    }

    fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        x: Src,
        dims: &EncoderDims,
    ) -> Result<Src, DiffusionError> {
        let slope = T::from_f64(LEAKY_SLOPE);
        let h = self.conv1.apply2d(g, x)?;
        let h = g.leaky_relu(h, slope);
        let h = self.conv2.apply2d(g, h)?;
        let h = g.leaky_relu(h, slope);
        let h = self.conv3.apply2d(g, h)?;
        let h = g.leaky_relu(h, slope);
        let b = g.value(h).shape()[3];
        let flat = g.reshape(h, vec![dims.flat(), b])?;
        self.fc.apply(g, flat)
    }
}

/// Three view encoders (or one shared), producing a `d_cam` latent per view.
#[derive(Clone, Debug)]
pub struct EncoderSet {
    pub mode: EncoderMode,
    pub dims: EncoderDims,
    nets: Vec<ViewNet>,
}

impl EncoderSet {
    pub fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        mode: EncoderMode,
        dims: EncoderDims,
        views: usize,
    ) -> Result<Self, DiffusionError> {
        let count = match mode {
            EncoderMode::Separate => views,
            EncoderMode::Unified => 1,
        };
        let nets = (0..count)
            .map(|v| ViewNet::build(store, rng, &format!("enc{v}"), &dims))
            .collect::<Result<_, _>>()?;
        Ok(Self { mode, dims, nets })
    }

    /// Encode one view's raster batch (1, S, S, B) → (d_cam, B).
    pub fn encode_view<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        view: usize,
        x: Src,
    ) -> Result<Src, DiffusionError> {
        let net = match self.mode {
            EncoderMode::Separate => &self.nets[view],
            EncoderMode::Unified => &self.nets[0],
        };
        net.forward(g, x, &self.dims)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use rand::SeedableRng;

    fn raster_input<T: Scalar>(seed: u64, s: usize, b: usize) -> Tensor<T> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(vec![1, s, s, b], |_| T::from_f64(rng.random_range(0.0..1.0)))
    }

    #[test]
    fn unified_mode_gives_identical_latents_for_identical_views() {
        let dims = EncoderDims::default();
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = EncoderSet::build(&mut store, &mut rng, EncoderMode::Unified, dims, 3).unwrap();
        let g = &mut Graph::new(&store);
        let x = g.input(raster_input::<f32>(2, 32, 2));
        let z0 = enc.encode_view(g, 0, x).unwrap();
        let z2 = enc.encode_view(g, 2, x).unwrap();
        assert_eq!(g.value(z0).data(), g.value(z2).data());
        assert_eq!(g.value(z0).shape(), &[64, 2]);
    }

    #[test]
    fn separate_mode_gives_different_latents_at_random_init() {
        let dims = EncoderDims::default();
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = EncoderSet::build(&mut store, &mut rng, EncoderMode::Separate, dims, 3).unwrap();
        let g = &mut Graph::new(&store);
        let x = g.input(raster_input::<f32>(2, 32, 1));
        let z0 = enc.encode_view(g, 0, x).unwrap();
        let z1 = enc.encode_view(g, 1, x).unwrap();
        assert_ne!(g.value(z0).data(), g.value(z1).data());
    }
}
