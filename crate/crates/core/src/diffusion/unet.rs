//! Noise predictor ε_θ: a two-level 1-D U-Net over the action horizon with
//! FiLM conditioning from the flattened observation window and a sinusoidal
//! embedding of the denoising step.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{Graph, ParamStore, Scalar, Src};

use super::layers::{ConvLayer, GroupNormLayer, LinearLayer};
use super::DiffusionError;

/// U-Net geometry. The door policy runs (64, 128) channels over a horizon of
/// 16; gradient-check tests shrink everything.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnetDims {
    pub action_dim: usize,
    pub horizon: usize,
    pub channels: [usize; 2],
    /// Flattened observation window length (T_o · d_o).
    pub obs_dim: usize,
    pub obs_embed: usize,
    pub step_sin: usize,
    pub step_embed: usize,
    pub groups: usize,
}

impl UnetDims {
    pub fn door_policy(obs_dim: usize, action_dim: usize, horizon: usize) -> Self {
        Self {
            action_dim,
            horizon,
            channels: [64, 128],
            obs_dim,
            obs_embed: 128,
            step_sin: 32,
            step_embed: 64,
            groups: 8,
        }
    }

    pub fn cond_dim(&self) -> usize {
        self.obs_embed + self.step_embed
    }
}

struct ResBlock {
    conv1: ConvLayer,
    gn1: GroupNormLayer,
    film: LinearLayer,
    conv2: ConvLayer,
    gn2: GroupNormLayer,
    skip: Option<ConvLayer>,
    c_out: usize,
}

impl ResBlock {
    fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        c_in: usize,
        c_out: usize,
        cond_dim: usize,
        groups: usize,
    ) -> Result<Self, DiffusionError> {
        let groups = groups.min(c_out);
        Ok(Self {
            conv1: ConvLayer::conv1d(store, rng, &format!("{name}.conv1"), c_in, c_out, 3, 1, 1)?,
            gn1: GroupNormLayer::new(store, &format!("{name}.gn1"), c_out, groups)?,
            film: LinearLayer::new_film(store, rng, &format!("{name}.film"), cond_dim, c_out)?,
            conv2: ConvLayer::conv1d(store, rng, &format!("{name}.conv2"), c_out, c_out, 3, 1, 1)?,
            gn2: GroupNormLayer::new(store, &format!("{name}.gn2"), c_out, groups)?,
            skip: if c_in == c_out {
                None
            } else {
                Some(ConvLayer::conv1d(store, rng, &format!("{name}.skip"), c_in, c_out, 1, 1, 0)?)
            },
            c_out,
        })
    }

    fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        x: Src,
        cond: Src,
    ) -> Result<Src, DiffusionError> {
        let h = self.conv1.apply1d(g, x)?;
        let h = self.gn1.apply(g, h)?;
        let ss = self.film.apply(g, cond)?;
        let scale = g.slice_rows(ss, 0, self.c_out)?;
        let shift = g.slice_rows(ss, self.c_out, self.c_out)?;
        let h = g.film(h, scale, shift)?;
        let h = g.mish(h);
        let h = self.conv2.apply1d(g, h)?;
        let h = self.gn2.apply(g, h)?;
        let h = g.mish(h);
        let res = match &self.skip {
            Some(conv) => conv.apply1d(g, x)?,
            None => x,
        };
        Ok(g.add(h, res)?)
    }
}

/// FiLM-conditioned two-level 1-D U-Net, input and output (d_a, T_p, B).
pub struct NoisePredictor {
    pub dims: UnetDims,
    obs_embed: LinearLayer,
    step_fc1: LinearLayer,
    step_fc2: LinearLayer,
    enc1: ResBlock,
    down: ConvLayer,
    enc2: ResBlock,
    mid: ResBlock,
    dec: ResBlock,
    head: ConvLayer,
}

impl NoisePredictor {
    pub fn build<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        dims: UnetDims,
    ) -> Result<Self, DiffusionError> {
        if dims.horizon % 2 != 0 {
            return Err(DiffusionError::Config(format!(
                "prediction horizon {} must be even for the two-level U-Net",
                dims.horizon
            )));
        }
        let [c1, c2] = dims.channels;
        let cond = dims.cond_dim();
        Ok(Self {
            obs_embed: LinearLayer::new(store, rng, "unet.obs_embed", dims.obs_dim, dims.obs_embed)?,
            step_fc1: LinearLayer::new(store, rng, "unet.step_fc1", dims.step_sin, dims.step_embed)?,
            step_fc2: LinearLayer::new(store, rng, "unet.step_fc2", dims.step_embed, dims.step_embed)?,
            enc1: ResBlock::build(store, rng, "unet.enc1", dims.action_dim, c1, cond, dims.groups)?,
            down: ConvLayer::conv1d(store, rng, "unet.down", c1, c1, 3, 2, 1)?,
            enc2: ResBlock::build(store, rng, "unet.enc2", c1, c2, cond, dims.groups)?,
            mid: ResBlock::build(store, rng, "unet.mid", c2, c2, cond, dims.groups)?,
            dec: ResBlock::build(store, rng, "unet.dec", c1 + c2, c1, cond, dims.groups)?,
            head: ConvLayer::conv1d_zero(store, "unet.head", c1, dims.action_dim, 3, 1)?,
            dims,
        })
    }

    /// ε̂ = forward(noised actions (d_a,T,B), flat observation window
    /// (obs_dim,B), sinusoidal step embedding (step_sin,B)).
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        actions: Src,
        obs_flat: Src,
        step_sin: Src,
    ) -> Result<Src, DiffusionError> {
        let oe = self.obs_embed.apply(g, obs_flat)?;
        let oe = g.mish(oe);
        let se = self.step_fc1.apply(g, step_sin)?;
        let se = g.mish(se);
        let se = self.step_fc2.apply(g, se)?;
        let cond = g.concat(&[oe, se])?;

        let h1 = self.enc1.forward(g, actions, cond)?;
        let hd = self.down.apply1d(g, h1)?;
        let h2 = self.enc2.forward(g, hd, cond)?;
        let hm = self.mid.forward(g, h2, cond)?;
        let hu = g.upsample2(hm)?;
        let cat = g.concat(&[hu, h1])?;
        let hd2 = self.dec.forward(g, cat, cond)?;
        let out = self.head.apply1d(g, hd2)?;
        debug_assert_eq!(g.value(out).shape(), g.value(actions).shape());
        Ok(out)
    }
}

/// Miniature geometry shared by gradient-check tests.
#[cfg(test)]
pub(crate) fn tests_tiny_dims() -> UnetDims {
    UnetDims {
        action_dim: 2,
        horizon: 4,
        channels: [8, 16],
        obs_dim: 12,
        obs_embed: 8,
        step_sin: 8,
        step_embed: 8,
        groups: 4,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;
    use rand::{Rng, SeedableRng};

    fn tiny_dims() -> UnetDims {
        super::tests_tiny_dims()
    }

    #[test]
    fn output_shape_matches_input_and_zero_head_gives_zero() {
        let dims = tiny_dims();
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = NoisePredictor::build(&mut store, &mut rng, dims).unwrap();
        let g = &mut Graph::new(&store);
        let mut r = ChaCha8Rng::seed_from_u64(6);
        let a = g.input(Tensor::from_fn(vec![2, 4, 3], |_| r.random_range(-1.0..1.0)));
        let o = g.input(Tensor::from_fn(vec![12, 3], |_| r.random_range(-1.0..1.0)));
        let k = g.input(Tensor::from_fn(vec![8, 3], |_| r.random_range(-1.0..1.0)));
        let out = net.forward(g, a, o, k).unwrap();
        assert_eq!(g.value(out).shape(), &[2, 4, 3]);
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn odd_horizon_is_rejected() {
        let mut dims = tiny_dims();
        dims.horizon = 5;
        let mut store = ParamStore::<f32>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(NoisePredictor::build(&mut store, &mut rng, dims).is_err());
    }

    #[test]
    fn full_miniature_gradient_matches_finite_differences() {
        // end-to-end fd check through FiLM, group norm, mish, up/down sampling
        let dims = tiny_dims();
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = NoisePredictor::build(&mut store, &mut rng, dims).unwrap();
        // give the zero head small nonzero weights so its gradient is exercised
        let head_w = store.lookup("unet.head.w").unwrap();
        let mut r2 = ChaCha8Rng::seed_from_u64(8);
        *store.get_mut(head_w) =
            Tensor::from_fn(store.get(head_w).shape().to_vec(), |_| r2.random_range(-0.1..0.1));

        let mut r = ChaCha8Rng::seed_from_u64(9);
        let a_in = Tensor::from_fn(vec![2, 4, 2], |_| r.random_range(-1.0..1.0));
        let o_in = Tensor::from_fn(vec![12, 2], |_| r.random_range(-1.0..1.0));
        let k_in = Tensor::from_fn(vec![8, 2], |_| r.random_range(-1.0..1.0));
        let target = Tensor::from_fn(vec![2, 4, 2], |_| r.random_range(-1.0..1.0));

        let build = |g: &mut Graph<'_, f64>| {
            let a = g.input(a_in.clone());
            let o = g.input(o_in.clone());
            let k = g.input(k_in.clone());
            let out = net.forward(g, a, o, k).unwrap();
            let tgt = g.input(target.clone());
            g.mse(out, tgt).unwrap()
        };

        let mut grads = crate::numerics::Grads::zeros_like(&store);
        {
            let g = &mut Graph::new(&store);
            let loss = build(g);
            g.backward(loss, &mut grads).unwrap();
        }
        let h = 1e-6;
        let mut checked = 0usize;
        for i in 0..store.len() {
            let n = store.values()[i].numel();
            // deterministic subsample: up to 6 elements per tensor
            let stride = (n / 6).max(1);
            for j in (0..n).step_by(stride) {
                let eval = |delta: f64| {
                    let mut s = store.clone();
                    s.values_mut()[i].data_mut()[j] += delta;
                    let g = &mut Graph::new(&s);
                    // rebuild against the perturbed store: same ids, new values
                    let a = g.input(a_in.clone());
                    let o = g.input(o_in.clone());
                    let k = g.input(k_in.clone());
                    let out = net.forward(g, a, o, k).unwrap();
                    let tgt = g.input(target.clone());
                    let l = g.mse(out, tgt).unwrap();
                    g.value(l).item()
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = grads.values[i].data()[j];
                let denom = an.abs().max(fd.abs()).max(1e-3);
                assert!(
                    (an - fd).abs() / denom < 1e-4,
                    "param {i} elem {j}: analytic {an} vs fd {fd}"
                );
                checked += 1;
            }
        }
        assert!(checked > 100, "only {checked} elements checked");
    }
}
