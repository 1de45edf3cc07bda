//! DDPM training: sample a window batch, corrupt the action block at a
//! uniform step k, regress the injected noise, Adam, optional EMA.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use std::path::Path;

use crate::dataset::{sample_window, DemoDataset, EpisodeView, VIEWS};
use crate::numerics::{adam_step, AdamState, EmaState, Grads, Graph, Src, Tensor};
use crate::util::mix_seed;
use crate::worldsim::{ACTION_DIM, PROPRIO_DIM, RASTER_SIZE};

use super::layers::sinusoidal_embedding;
use super::sample::q_sample;
use super::{DiffusionError, DiffusionPolicy};

const SEED_STREAM_TRAIN: u64 = 2;

/// Progress record emitted once per step (consumed by the loss log).
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct TrainProgress {
    pub step: u64,
    pub loss: f32,
}

/// Door-policy trainer: owns optimizer and EMA state, borrows the dataset.
pub struct Trainer<'d> {
    pub policy: DiffusionPolicy,
    dataset: &'d DemoDataset,
    adam: AdamState<f32>,
    ema: Option<EmaState<f32>>,
    master_seed: u64,
}

impl<'d> Trainer<'d> {
    pub fn new(policy: DiffusionPolicy, dataset: &'d DemoDataset) -> Self {
        let adam = AdamState::new(&policy.store, policy.config.adam());
        let ema = policy
            .config
            .ema_enabled
            .then(|| EmaState::new(&policy.store, policy.config.ema_decay));
        let master_seed = policy.config.seed;
        Self {
            policy,
            dataset,
            adam,
            ema,
            master_seed,
        }
    }

    /// One optimization step; returns the batch loss.
    pub fn step(&mut self) -> Result<f32, DiffusionError> {
        let step_idx = self.policy.train_steps_done;
        let batch_seed = mix_seed(self.master_seed, SEED_STREAM_TRAIN, step_idx);
        let mut rng = ChaCha8Rng::seed_from_u64(batch_seed);
        let cfg = &self.policy.config;
        let (t_o, t_p, b) = (cfg.t_o, cfg.t_p, cfg.batch);
        let views: Vec<EpisodeView<'_>> =
            self.dataset.episodes.iter().map(EpisodeView::new).collect();

        // batched inputs, batch-trailing layout
        let mut noised = Tensor::<f32>::zeros(vec![ACTION_DIM, t_p, b]);
        let mut eps_t = Tensor::<f32>::zeros(vec![ACTION_DIM, t_p, b]);
        let mut rasters =
            vec![Tensor::<f32>::zeros(vec![1, RASTER_SIZE, RASTER_SIZE, b]); t_o * VIEWS];
        let mut proprio = vec![Tensor::<f32>::zeros(vec![PROPRIO_DIM, b]); t_o];
        let mut k_sin = Tensor::<f32>::zeros(vec![self.policy.predictor.dims.step_sin, b]);

        for lane in 0..b {
            let ep = rng.random_range(0..views.len());
            let view = &views[ep];
            let t = rng.random_range(0..view.len());
            let w = sample_window(view, t, t_o, t_p, &self.policy.normalizer);
            let k = rng.random_range(1..=self.policy.schedule.k_train());
            let eps: Vec<f32> = (0..t_p * ACTION_DIM)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z as f32
                })
                .collect();
            let corrupted = q_sample(&w.actions, k, &eps, &self.policy.schedule);
            // (t_p, d_a) row-major → (d_a, t_p, lane)
            for t_i in 0..t_p {
                for d in 0..ACTION_DIM {
                    let src = t_i * ACTION_DIM + d;
                    let dst = (d * t_p + t_i) * b + lane;
                    noised.data_mut()[dst] = corrupted[src];
                    eps_t.data_mut()[dst] = eps[src];
                }
            }
            for f in 0..t_o {
                for v in 0..VIEWS {
                    let plane = RASTER_SIZE * RASTER_SIZE;
                    let src = &w.obs_rasters[(f * VIEWS + v) * plane..(f * VIEWS + v + 1) * plane];
                    let dst = rasters[f * VIEWS + v].data_mut();
                    for (p, &val) in src.iter().enumerate() {
                        dst[p * b + lane] = val;
                    }
                }
                let dst = proprio[f].data_mut();
                for d in 0..PROPRIO_DIM {
                    dst[d * b + lane] = w.obs_proprio[f * PROPRIO_DIM + d];
                }
            }
            let emb = sinusoidal_embedding(k, self.policy.predictor.dims.step_sin);
            for (d, &val) in emb.iter().enumerate() {
                k_sin.data_mut()[d * b + lane] = val;
            }
        }

        // forward
        let mut grads = Grads::zeros_like(&self.policy.store);
        let loss = {
            let g = &mut Graph::new(&self.policy.store);
            let mut frames: Vec<Src> = Vec::with_capacity(t_o);
            for f in 0..t_o {
                let r = [
                    g.input(rasters[f * VIEWS].clone()),
                    g.input(rasters[f * VIEWS + 1].clone()),
                    g.input(rasters[f * VIEWS + 2].clone()),
                ];
                let p = g.input(proprio[f].clone());
                frames.push(self.policy.encode_frame(g, r, p)?);
            }
            let obs_flat = g.concat(&frames)?;
            let a_in = g.input(noised);
            let ks = g.input(k_sin);
            let eps_hat = self.policy.predictor.forward(g, a_in, obs_flat, ks)?;
            let target = g.input(eps_t);
            let loss_node = g.mse(eps_hat, target)?;
            let loss = g.value(loss_node).item();
            if !loss.is_finite() {
                return Err(DiffusionError::Divergence {
                    step: step_idx,
                    batch_seed,
                    loss: loss as f64,
                });
            }
            g.backward(loss_node, &mut grads)?;
            loss
        };

        adam_step(&mut self.policy.store, &grads, &mut self.adam).map_err(|e| match e {
            crate::numerics::NumericsError::NonFiniteGrad { .. } => DiffusionError::Divergence {
                step: step_idx,
                batch_seed,
                loss: f64::NAN,
            },
            other => DiffusionError::Numerics(other),
        })?;
        if let Some(ema) = &mut self.ema {
            ema.update(&self.policy.store);
        }
        self.policy.train_steps_done += 1;
        Ok(loss)
    }

    /// Clone of the policy with EMA weights swapped in (or raw weights when
    /// EMA is disabled).
    pub fn ema_policy(&self) -> Result<DiffusionPolicy, DiffusionError> {
        let mut policy = DiffusionPolicy::new(
            self.policy.config.clone(),
            self.policy.normalizer.stats.clone(),
        )?;
        match &self.ema {
            Some(ema) => policy.store.load_values(ema.shadow())?,
            None => policy.store.load_values(self.policy.store.values())?,
        }
        policy.train_steps_done = self.policy.train_steps_done;
        Ok(policy)
    }
}

/// Full training loop with periodic checkpointing and a loss log; writes
/// `<out>/policy.dpck/.toml` (raw) and `<out>/policy_ema.dpck/.toml`.
pub fn train_door_policy(
    policy: DiffusionPolicy,
    dataset: &DemoDataset,
    out_dir: &Path,
    mut on_progress: impl FnMut(TrainProgress),
) -> Result<(), DiffusionError> {
    std::fs::create_dir_all(out_dir)?;
    let steps = policy.config.train_steps as u64;
    let every = policy.config.checkpoint_every.max(1) as u64;
    let mut trainer = Trainer::new(policy, dataset);
    while trainer.policy.train_steps_done < steps {
        let loss = trainer.step()?;
        let done = trainer.policy.train_steps_done;
        on_progress(TrainProgress { step: done, loss });
        if done % every == 0 && done < steps {
            trainer
                .policy
                .save(&out_dir.join(format!("policy_step{done}")))?;
            trainer
                .ema_policy()?
                .save(&out_dir.join(format!("policy_ema_step{done}")))?;
        }
    }
    trainer.policy.save(&out_dir.join("policy"))?;
    trainer.ema_policy()?.save(&out_dir.join("policy_ema"))?;
    Ok(())
}

/// Synthetic two-mode task: a tiny conditional denoiser trained on constant
/// observations with action sequences at ±`mode` chosen uniformly. Exposed
/// for the distribution-recovery oracle (and reused by the acceptance suite).
pub mod toy_bimodal {
    use super::*;
    use crate::diffusion::schedule::NoiseSchedule;
    use crate::diffusion::unet::{NoisePredictor, UnetDims};
    use crate::numerics::ParamStore;

    pub struct ToyTask {
        pub store: ParamStore<f32>,
        pub net: NoisePredictor,
        pub schedule: NoiseSchedule,
        pub dims: UnetDims,
    }

    pub fn dims() -> UnetDims {
        UnetDims {
            action_dim: 1,
            horizon: 4,
            channels: [16, 32],
            obs_dim: 4,
            obs_embed: 8,
            step_sin: 16,
            step_embed: 16,
            groups: 4,
        }
    }

    pub fn build(seed: u64) -> Result<ToyTask, DiffusionError> {
        let dims = dims();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = NoisePredictor::build(&mut store, &mut rng, dims)?;
        let schedule = NoiseSchedule::squared_cosine(100)?;
        Ok(ToyTask {
            store,
            net,
            schedule,
            dims,
        })
    }

    /// Train with Adam on batches of ±mode sequences; returns
    /// (initial loss, final loss).
    pub fn train(
        task: &mut ToyTask,
        steps: usize,
        batch: usize,
        mode: f32,
        seed: u64,
    ) -> Result<(f32, f32), DiffusionError> {
        let mut adam = AdamState::new(
            &task.store,
            crate::numerics::AdamConfig {
                lr: 3e-4,
                ..Default::default()
            },
        );
        let mut first = None;
        let mut last = 0.0;
        for step in 0..steps {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 3, step as u64));
            let n = task.dims.action_dim * task.dims.horizon;
            let mut noised = Tensor::<f32>::zeros(vec![task.dims.action_dim, task.dims.horizon, batch]);
            let mut eps_t = noised.clone();
            let mut k_sin = Tensor::<f32>::zeros(vec![task.dims.step_sin, batch]);
            for lane in 0..batch {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let a0 = vec![sign * mode; n];
                let k = rng.random_range(1..=task.schedule.k_train());
                let eps: Vec<f32> = (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z as f32
                    })
                    .collect();
                let corrupted = q_sample(&a0, k, &eps, &task.schedule);
                for i in 0..n {
                    noised.data_mut()[i * batch + lane] = corrupted[i];
                    eps_t.data_mut()[i * batch + lane] = eps[i];
                }
                for (d, &v) in sinusoidal_embedding(k, task.dims.step_sin).iter().enumerate() {
                    k_sin.data_mut()[d * batch + lane] = v;
                }
            }
            let mut grads = Grads::zeros_like(&task.store);
            let loss = {
                let g = &mut Graph::new(&task.store);
                let a = g.input(noised);
                let o = g.input(Tensor::zeros(vec![task.dims.obs_dim, batch]));
                let ks = g.input(k_sin);
                let out = task.net.forward(g, a, o, ks)?;
                let tgt = g.input(eps_t);
                let l = g.mse(out, tgt)?;
                let loss = g.value(l).item();
                g.backward(l, &mut grads)?;
                loss
            };
            if !loss.is_finite() {
                return Err(DiffusionError::Divergence {
                    step: step as u64,
                    batch_seed: seed,
                    loss: loss as f64,
                });
            }
            adam_step(&mut task.store, &grads, &mut adam)?;
            first.get_or_insert(loss);
            last = loss;
        }
        Ok((first.unwrap_or(last), last))
    }

    /// Draw `n` sequences and classify each by its mean against the modes.
    /// Returns (hits within `tol` of either mode, count at +mode).
    pub fn sample_modes(
        task: &ToyTask,
        n: usize,
        k_infer: usize,
        mode: f32,
        tol: f32,
        seed: u64,
    ) -> Result<(usize, usize), DiffusionError> {
        let obs = vec![0.0f32; task.dims.obs_dim];
        let mut near = 0;
        let mut positive = 0;
        for i in 0..n {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 4, i as u64));
            let (a, _) = super::super::sample::sample_actions(
                &task.net,
                &task.store,
                &obs,
                &task.schedule,
                k_infer,
                &mut rng,
            )?;
            let mean = a.iter().sum::<f32>() / a.len() as f32;
            if (mean - mode).abs() < tol {
                near += 1;
                positive += 1;
            } else if (mean + mode).abs() < tol {
                near += 1;
            }
        }
        Ok((near, positive))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{collect_demos, NormStats, RandomizationSpec};
    use crate::diffusion::{EncoderMode, PolicyConfig};
    use crate::worldsim::WorldSpec;

    fn small_config() -> PolicyConfig {
        PolicyConfig {
            t_o: 2,
            t_p: 8,
            t_a: 4,
            k_train: 20,
            k_infer: 20,
            batch: 4,
            train_steps: 3,
            encoder_mode: EncoderMode::Separate,
            ..Default::default()
        }
    }

    #[test]
    fn loss_at_init_is_about_one_and_steps_are_deterministic() {
        let spec = WorldSpec::default();
        let (ds, _) = collect_demos(1, 5, &spec, &RandomizationSpec::default()).unwrap();
        let run = || {
            let policy =
                DiffusionPolicy::new(small_config(), ds.manifest.stats.clone()).unwrap();
            let mut tr = Trainer::new(policy, &ds);
            let mut losses = Vec::new();
            for _ in 0..3 {
                losses.push(tr.step().unwrap());
            }
            losses
        };
        let a = run();
        let b = run();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        // zero-initialized head predicts 0 against unit-variance noise
        assert!((a[0] - 1.0).abs() < 0.25, "init loss {}", a[0]);
    }

    #[test]
    fn forced_exact_epsilon_gives_zero_loss() {
        // loss definition check with a stub prediction path: mse(ε, ε) = 0
        let stats = NormStats {
            proprio_min: vec![-1.0; PROPRIO_DIM],
            proprio_max: vec![1.0; PROPRIO_DIM],
            action_min: vec![-1.0; ACTION_DIM],
            action_max: vec![1.0; ACTION_DIM],
        };
        let policy = DiffusionPolicy::new(small_config(), stats).unwrap();
        let g = &mut Graph::new(&policy.store);
        let eps = g.input(Tensor::from_fn(vec![ACTION_DIM, 8, 2], |i| (i as f32).sin()));
        let loss = g.mse(eps, eps).unwrap();
        assert_eq!(g.value(loss).item(), 0.0);
    }

    #[test]
    fn toy_bimodal_smoke_learns_direction() {
        let mut task = toy_bimodal::build(1).unwrap();
        let (first, last) = toy_bimodal::train(&mut task, 120, 32, 0.5, 2).unwrap();
        assert!(last < first, "loss did not improve: {first} -> {last}");
    }
}
