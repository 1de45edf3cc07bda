//! Receding-horizon execution: observe at 10 Hz, predict T_p actions,
//! execute the first T_a (each held for 5 simulator steps), replan.

use std::collections::VecDeque;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;

use crate::dataset::{POLICY_SUBSAMPLE, RASTER_LEN};
use crate::expert::{Expert, ExpertConfig};
use crate::numerics::{Graph, Tensor};
use crate::worldsim::{
    render_views, AppearanceSpec, DisturbanceScript, SimAction, TraceRecord, World,
    ACTION_DIM, PROPRIO_DIM, RASTER_SIZE,
};

use super::{DiffusionError, DiffusionPolicy};

/// One captured observation: three rasters plus raw proprio.
#[derive(Clone, Debug)]
pub struct ObsFrame {
    pub rasters: Vec<f32>,
    pub proprio: [f32; PROPRIO_DIM],
}

impl ObsFrame {
    pub fn capture(world: &World, appearance: &AppearanceSpec) -> Self {
        let views = render_views(&world.spec, &world.state, appearance);
        let mut rasters = Vec::with_capacity(RASTER_LEN);
        for v in views {
            rasters.extend_from_slice(&v);
        }
        let p = world.state.proprio();
        let mut proprio = [0.0f32; PROPRIO_DIM];
        for (d, &v) in p.iter().enumerate() {
            proprio[d] = v as f32;
        }
        Self { rasters, proprio }
    }
}

/// Who drives the episode.
pub enum RolloutPolicy<'a> {
    /// Trained policy sampling with `k_infer` denoising steps.
    Diffusion {
        policy: &'a DiffusionPolicy,
        k_infer: usize,
    },
    /// The scripted demonstrator run through the same evaluation pipeline.
    Expert,
}

#[derive(Clone, Debug)]
pub struct RolloutOptions {
    /// Seeds the policy's sampling noise stream.
    pub seed: u64,
    pub appearance: AppearanceSpec,
    pub disturbance: Option<DisturbanceScript>,
    pub record_trace: bool,
}

/// Everything the evaluation layers need to classify an episode.
#[derive(Clone, Debug, Default)]
pub struct EpisodeOutcome {
    pub success: bool,
    pub sim_time: f64,
    pub steps: usize,
    pub collided: bool,
    pub crossed: bool,
    pub ever_unlatched: bool,
    pub ever_attached: bool,
    pub grasp_lost: bool,
    pub max_door_angle: f64,
    /// Wall-clock per planning call (µs); empty for the expert.
    pub latencies_us: Vec<u64>,
    pub disturbance_fired: bool,
    /// Right gripper re-entered the handle capture radius after the
    /// disturbance ended.
    pub regrasped_after_disturbance: bool,
    /// Door re-opened past 0.5 rad within 15 s of the disturbance ending.
    pub reopened_after_disturbance: bool,
    pub trace: Vec<TraceRecord>,
}

impl DiffusionPolicy {
    /// Encode the observation history (repeat-first padding) and sample one
    /// action plan; returns the first T_a actions denormalized, the
    /// wall-clock in µs, and the predictor evaluation count.
    pub fn plan(
        &self,
        history: &VecDeque<ObsFrame>,
        k_infer: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Vec<SimAction>, u64, usize), DiffusionError> {
        assert!(!history.is_empty(), "plan called with no observations");
        let start = Instant::now();
        let t_o = self.config.t_o;
        let obs_flat = {
            let g = &mut Graph::new(&self.store);
            let mut frames = Vec::with_capacity(t_o);
            for f in 0..t_o {
                // oldest-first with repeat-first padding
                let idx = (history.len() + f + 1).saturating_sub(t_o).saturating_sub(1);
                let frame = &history[idx.min(history.len() - 1)];
                let plane = RASTER_SIZE * RASTER_SIZE;
                let rasters = [0, 1, 2].map(|v| {
                    g.input(
                        Tensor::new(
                            vec![1, RASTER_SIZE, RASTER_SIZE, 1],
                            frame.rasters[v * plane..(v + 1) * plane].to_vec(),
                        )
                        .expect("raster tensor"),
                    )
                });
                let mut norm = vec![0.0f32; PROPRIO_DIM];
                self.normalizer.normalize_proprio(&frame.proprio, &mut norm);
                let p = g.input(Tensor::new(vec![PROPRIO_DIM, 1], norm).expect("proprio tensor"));
                frames.push(self.encode_frame(g, rasters, p)?);
            }
            let obs = g.concat(&frames)?;
            g.value(obs).data().to_vec()
        };
        let (flat, evals) = super::sample::sample_actions(
            &self.predictor,
            &self.store,
            &obs_flat,
            &self.schedule,
            k_infer,
            rng,
        )?;
        // (d_a, T_p) channel-first → per-time action rows, first T_a only
        let t_p = self.config.t_p;
        let mut actions = Vec::with_capacity(self.config.t_a);
        for t in 0..self.config.t_a {
            let mut row = [0.0f32; ACTION_DIM];
            for (d, r) in row.iter_mut().enumerate() {
                *r = flat[d * t_p + t];
            }
            let mut denorm = [0.0f64; ACTION_DIM];
            self.normalizer.denormalize_action(&row, &mut denorm);
            actions.push(SimAction::from_vec(&denorm));
        }
        let latency = start.elapsed().as_micros() as u64;
        Ok((actions, latency, evals))
    }
}

/// Run one full episode under the given policy, collecting the outcome
/// diagnostics used for failure attribution and recovery metrics.
pub fn run_policy_episode(
    world: &mut World,
    policy: &RolloutPolicy<'_>,
    opts: &RolloutOptions,
) -> Result<EpisodeOutcome, DiffusionError> {
    let mut out = EpisodeOutcome::default();
    if let Some(script) = opts.disturbance {
        world.set_disturbance(script);
    }
    let mut expert = Expert::new(ExpertConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    use rand::SeedableRng;
    let mut history: VecDeque<ObsFrame> = VecDeque::new();
    let mut buffer: VecDeque<SimAction> = VecDeque::new();
    let mut held_action = SimAction::default();
    let mut sim_step = 0usize;
    let mut was_attached = false;
    let mut disturbance_end: Option<f64> = None;

    while world.state.t < world.spec.time_limit && !world.state.crossed {
        let action = match policy {
            RolloutPolicy::Expert => {
                let spec = world.spec.clone();
                expert
                    .step(&spec, &world.state)
                    .map_err(|e| DiffusionError::Config(format!("expert failed: {e}")))?
            }
            RolloutPolicy::Diffusion { policy, k_infer } => {
                // observe at policy rate; each planned action is held for
                // POLICY_SUBSAMPLE simulator steps
                if sim_step % POLICY_SUBSAMPLE == 0 {
                    history.push_back(ObsFrame::capture(world, &opts.appearance));
                    while history.len() > policy.config.t_o {
                        history.pop_front();
                    }
                    if buffer.is_empty() {
                        let (actions, latency, _) = policy.plan(&history, *k_infer, &mut rng)?;
                        out.latencies_us.push(latency);
                        buffer.extend(actions);
                    }
                    held_action = buffer.pop_front().expect("planner returned no actions");
                }
                held_action
            }
        };
        if opts.record_trace {
            out.trace.push(TraceRecord {
                t: world.state.t,
                state: world.state.clone(),
                action,
            });
        }
        world
            .step(&action)
            .map_err(|e| DiffusionError::Config(format!("sim error: {e}")))?;
        sim_step += 1;

        let s = &world.state;
        out.ever_unlatched |= !s.latched;
        let attached = s.attach[1].is_attached() || s.attach[0].is_attached();
        out.ever_attached |= attached;
        if was_attached && !attached && !s.crossed {
            out.grasp_lost = true;
        }
        was_attached = attached;
        out.max_door_angle = out.max_door_angle.max(s.door_angle);
        if world.disturbance_done && disturbance_end.is_none() {
            disturbance_end = Some(s.t);
            out.disturbance_fired = true;
        }
        if let Some(t_end) = disturbance_end {
            if s.t <= t_end + 15.0 {
                let (tip, _) = world.gripper(1);
                let handle = world.spec.door.handle_point(s.door_angle);
                let d = ((tip[0] - handle[0]).powi(2) + (tip[1] - handle[1]).powi(2)).sqrt();
                if d <= world.spec.robot.gripper_capture_radius {
                    out.regrasped_after_disturbance = true;
                }
                if s.door_angle > 0.5 {
                    out.reopened_after_disturbance = true;
                }
            }
        }
    }

    out.success = world.success();
    out.collided = world.state.collided;
    out.crossed = world.state.crossed;
    out.sim_time = world.state.t;
    out.steps = sim_step;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::worldsim::{Pose, WorldSpec};

    #[test]
    fn expert_through_the_rollout_pipeline_succeeds() {
        let spec = WorldSpec::default();
        let mut world = World::new(spec, Pose::new(-0.9, 0.45, 0.2)).unwrap();
        let opts = RolloutOptions {
            seed: 1,
            appearance: AppearanceSpec::default(),
            disturbance: None,
            record_trace: true,
        };
        let out = run_policy_episode(&mut world, &RolloutPolicy::Expert, &opts).unwrap();
        assert!(out.success);
        assert!(out.ever_unlatched && out.ever_attached);
        assert!(out.max_door_angle > 1.0);
        assert!(!out.trace.is_empty());
        assert!(out.latencies_us.is_empty());
    }

    #[test]
    fn untrained_policy_flails_but_runs() {
        use crate::dataset::NormStats;
        let stats = NormStats {
            proprio_min: vec![-2.0; PROPRIO_DIM],
            proprio_max: vec![2.0; PROPRIO_DIM],
            action_min: vec![-0.5; ACTION_DIM],
            action_max: vec![0.5; ACTION_DIM],
        };
        let config = crate::diffusion::PolicyConfig {
            k_train: 5,
            k_infer: 5,
            t_p: 4,
            t_a: 2,
            ..Default::default()
        };
        let policy = DiffusionPolicy::new(config, stats).unwrap();
        let spec = WorldSpec {
            time_limit: 2.0,
            ..Default::default()
        };
        let mut world = World::new(spec, Pose::new(-0.9, 0.45, 0.0)).unwrap();
        let opts = RolloutOptions {
            seed: 3,
            appearance: AppearanceSpec::default(),
            disturbance: None,
            record_trace: false,
        };
        let out = run_policy_episode(
            &mut world,
            &RolloutPolicy::Diffusion { policy: &policy, k_infer: 5 },
            &opts,
        )
        .unwrap();
        assert!(!out.success);
        assert!(!out.latencies_us.is_empty());
    }
}
