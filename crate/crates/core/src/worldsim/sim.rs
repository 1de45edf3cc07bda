//! Fixed-step integration.
//!
//! Step order: clamp action → base → arms/grippers → grasp attach/release →
//! coupling torque → disturbance torque → door (semi-implicit Euler, frozen
//! while latched) → handle twist → latch logic → collision and crossing
//! flags. Every substep is pure f64 arithmetic in a fixed order, so a
//! (spec, state, action stream) triple reproduces bit-identical trajectories.

use serde::{Deserialize, Serialize};

use super::spec::{DisturbanceScript, DisturbanceTrigger, WorldSpec};
use super::state::{arm_forward, Attachment, Pose, SimAction, WorldState};
use super::SimError;

/// Door mechanical energy: ½Iθ̇² + ½kθ².
pub fn door_energy(spec: &WorldSpec, state: &WorldState) -> f64 {
    0.5 * spec.door.door_inertia * state.door_rate.powi(2)
        + 0.5 * spec.door.spring_stiffness * state.door_angle.powi(2)
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Distance from point `p` to segment `ab`.
pub(crate) fn point_segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * ab[0] + (p[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
    };
    dist2(p, [a[0] + t * ab[0], a[1] + t * ab[1]]).sqrt()
}

/// Proper segment intersection test (shared endpoints count as crossing).
fn segments_intersect(p1: [f64; 2], p2: [f64; 2], q1: [f64; 2], q2: [f64; 2]) -> bool {
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
}

fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    } else if a < -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq)]
struct DisturbanceState {
    fired: bool,
    active_until: Option<f64>,
}

/// Owning simulator instance: spec, mutable state, optional disturbance
/// script. Single-threaded; run many instances in parallel with independent
/// seeds if needed.
#[derive(Clone, Debug)]
pub struct World {
    pub spec: WorldSpec,
    pub state: WorldState,
    script: Option<DisturbanceScript>,
    dist: DisturbanceState,
    /// Set while the scripted closing torque is being applied.
    pub disturbance_active: bool,
    /// Set once a scripted disturbance has finished.
    pub disturbance_done: bool,
}

impl World {
    pub fn new(spec: WorldSpec, init_base: Pose) -> Result<Self, SimError> {
        spec.validate()?;
        let state = WorldState::initial(&spec.robot, init_base);
        Ok(Self {
            spec,
            state,
            script: None,
            dist: DisturbanceState::default(),
            disturbance_active: false,
            disturbance_done: false,
        })
    }

    /// Install the episode's (single) disturbance script.
    pub fn set_disturbance(&mut self, script: DisturbanceScript) {
        self.script = Some(script);
        self.dist = DisturbanceState::default();
        self.disturbance_done = false;
    }

    /// Gripper world point and absolute wrist angle for arm `i` (0 = left).
    pub fn gripper(&self, i: usize) -> ([f64; 2], f64) {
        let (pts, wrist) = arm_forward(&self.state.base, &self.spec.robot.arms[i], &self.state.joints[i]);
        (pts[3], wrist)
    }

    /// All joint points of arm `i`, mount through gripper.
    pub fn arm_points(&self, i: usize) -> [[f64; 2]; 4] {
        arm_forward(&self.state.base, &self.spec.robot.arms[i], &self.state.joints[i]).0
    }

    /// True iff the base has crossed the doorway without ever colliding,
    /// inside the episode time limit.
    pub fn success(&self) -> bool {
        self.state.crossed && !self.state.collided && self.state.t <= self.spec.time_limit
    }

    pub fn timed_out(&self) -> bool {
        self.state.t >= self.spec.time_limit
    }

    /// Advance one fixed step.
    pub fn step(&mut self, action: &SimAction) -> Result<(), SimError> {
        if !action.is_finite() {
            return Err(SimError::BadAction("action"));
        }
        let dt = self.spec.dt;
        let act = action.clamped(&self.spec.robot, dt);
        let door = self.spec.door.clone();
        let prev_base = self.state.base.position();
        let prev_grippers = [self.gripper(0), self.gripper(1)];

        // base unicycle kinematics
        let (s, c) = self.state.base.yaw.sin_cos();
        self.state.base.x += act.v * c * dt;
        self.state.base.y += act.v * s * dt;
        self.state.base.yaw = wrap_angle(self.state.base.yaw + act.omega * dt);

        // arms: already rate-clamped increments, then joint limits
        for i in 0..2 {
            let lim = self.spec.robot.arms[i].joint_limit;
            for j in 0..3 {
                self.state.joints[i][j] = (self.state.joints[i][j] + act.dq[i][j]).clamp(-lim, lim);
            }
            let g = &mut self.state.grip[i];
            let step = self.spec.robot.gripper_rate * dt;
            *g += (act.grip[i] - *g).clamp(-step, step);
        }

        let grippers = [self.gripper(0), self.gripper(1)];

        // grasp attach/release by closure, with hysteresis
        for i in 0..2 {
            match self.state.attach[i] {
                Attachment::None => {
                    if self.state.grip[i] > 0.8 {
                        let (gp, wrist) = grippers[i];
                        let capture = self.spec.robot.gripper_capture_radius;
                        let handle = door.handle_point(self.state.door_angle);
                        let edge = door.edge_point(self.state.door_angle);
                        let dh = dist2(gp, handle).sqrt();
                        let de = dist2(gp, edge).sqrt();
                        if dh <= capture && dh <= de {
                            self.state.attach[i] = Attachment::Handle {
                                wrist_ref: wrist,
                                twist_ref: self.state.handle_twist,
                            };
                        } else if de <= capture {
                            self.state.attach[i] = Attachment::DoorEdge;
                        }
                    }
                }
                _ => {
                    if self.state.grip[i] < 0.7 {
                        self.state.attach[i] = Attachment::None;
                    }
                }
            }
        }

        // coupling torque from attached grippers (zero when nothing attached)
        let mut torque = 0.0;
        for i in 0..2 {
            let offset = match self.state.attach[i] {
                Attachment::None => continue,
                Attachment::Handle { .. } => door.handle_offset,
                Attachment::DoorEdge => door.panel_length,
            };
            let (gp, _) = grippers[i];
            let gv = [
                (gp[0] - prev_grippers[i].0[0]) / dt,
                (gp[1] - prev_grippers[i].0[1]) / dt,
            ];
            let ap = door.panel_point(self.state.door_angle, offset);
            let av = door.panel_point_velocity(self.state.door_angle, self.state.door_rate, offset);
            let f = [
                self.spec.grasp_stiffness * (gp[0] - ap[0]) + self.spec.grasp_damping * (gv[0] - av[0]),
                self.spec.grasp_stiffness * (gp[1] - ap[1]) + self.spec.grasp_damping * (gv[1] - av[1]),
            ];
            let fmag = (f[0] * f[0] + f[1] * f[1]).sqrt();
            if fmag > self.spec.robot.grasp_break_force {
                self.state.attach[i] = Attachment::None;
                continue;
            }
            let r = [ap[0] - door.hinge_position[0], ap[1] - door.hinge_position[1]];
            torque += r[0] * f[1] - r[1] * f[0];
        }

        // scripted disturbance: one shot, fixed duration
        self.disturbance_active = false;
        if let Some(script) = self.script {
            if !self.dist.fired {
                let hit = match script.trigger {
                    DisturbanceTrigger::DoorAngle(a) => self.state.door_angle >= a,
                    DisturbanceTrigger::SimTime(t) => self.state.t >= t,
                };
                if hit {
                    self.dist.fired = true;
                    self.dist.active_until = Some(self.state.t + script.duration);
                }
            }
            if let Some(until) = self.dist.active_until {
                if self.state.t < until {
                    torque -= script.torque;
                    self.disturbance_active = true;
                } else {
                    self.dist.active_until = None;
                    self.disturbance_done = true;
                }
            }
        }

        // door: latched means held shut regardless of torque
        if self.state.latched {
            self.state.door_angle = 0.0;
            self.state.door_rate = 0.0;
        } else {
            let accel = (torque
                - door.damping * self.state.door_rate
                - door.spring_stiffness * self.state.door_angle)
                / door.door_inertia;
            self.state.door_rate += accel * dt;
            self.state.door_angle += self.state.door_rate * dt;
            if self.state.door_angle <= 0.0 {
                self.state.door_angle = 0.0;
                self.state.door_rate = 0.0;
            } else if self.state.door_angle >= door.max_open_angle {
                self.state.door_angle = door.max_open_angle;
                self.state.door_rate = 0.0;
            }
        }

        // handle twist: driven by the wrist while a gripper holds the handle,
        // spring return otherwise
        let mut held = false;
        for i in 0..2 {
            if let Attachment::Handle { wrist_ref, twist_ref } = self.state.attach[i] {
                let (_, wrist) = grippers[i];
                let twist = twist_ref + wrap_angle(wrist - wrist_ref);
                self.state.handle_twist = twist.clamp(0.0, door.handle_twist_limit);
                held = true;
            }
        }
        if !held {
            self.state.handle_twist =
                (self.state.handle_twist - door.handle_return_rate * dt).max(0.0);
        }

        // latch
        if self.state.latched {
            if self.state.handle_twist >= door.latch_release_angle {
                self.state.latched = false;
            }
        } else if self.state.door_angle < 0.01
            && self.state.handle_twist < 0.1 * door.latch_release_angle
        {
            self.state.latched = true;
        }

        // collision: base disc against door panel and walls
        let base_p = self.state.base.position();
        let radius = self.spec.robot.base_radius;
        let panel_end = door.edge_point(self.state.door_angle);
        let mut hit = point_segment_distance(base_p, door.hinge_position, panel_end) < radius;
        for (a, b) in self.spec.walls() {
            hit |= point_segment_distance(base_p, a, b) < radius;
        }
        if hit {
            self.state.collided = true;
        }

        // doorway crossing
        let (da, db) = self.spec.doorway();
        if segments_intersect(prev_base, base_p, da, db) {
            self.state.crossed = true;
        }

        self.state.t += dt;
        if let Some(field) = self.state.all_finite() {
            return Err(SimError::Blowup { field, t: self.state.t });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world() -> World {
        World::new(WorldSpec::default(), Pose::new(-0.9, 0.45, 0.0)).unwrap()
    }

    #[test]
    fn zero_action_on_latched_door_only_advances_time() {
        let mut w = world();
        let before = w.state.clone();
        w.step(&SimAction::default()).unwrap();
        let mut after = w.state.clone();
        assert!((after.t - before.t - w.spec.dt).abs() < 1e-15);
        after.t = before.t;
        assert_eq!(before, after);
    }

    #[test]
    fn unlatched_door_swings_shut_and_energy_decays() {
        let mut w = world();
        w.state.latched = false;
        w.state.door_angle = 0.5;
        let mut prev_angle = w.state.door_angle;
        let mut prev_energy = door_energy(&w.spec, &w.state);
        for _ in 0..300 {
            w.step(&SimAction::default()).unwrap();
            assert!(w.state.door_angle < prev_angle || w.state.door_angle == 0.0);
            let e = door_energy(&w.spec, &w.state);
            assert!(e <= prev_energy, "energy rose: {e} > {prev_energy}");
            prev_angle = w.state.door_angle;
            prev_energy = e;
        }
        assert!(w.state.door_angle < 0.05);
    }

    #[test]
    fn door_closes_from_ninety_degrees_in_a_few_seconds() {
        let mut w = world();
        w.state.latched = false;
        w.state.door_angle = std::f64::consts::FRAC_PI_2;
        let mut closed_at = None;
        for _ in 0..(10.0 / w.spec.dt) as usize {
            w.step(&SimAction::default()).unwrap();
            if w.state.door_angle < 0.1 {
                closed_at = Some(w.state.t);
                break;
            }
        }
        let t = closed_at.expect("door never closed");
        assert!((3.0..=7.0).contains(&t), "closed at {t}s");
    }

    #[test]
    fn latched_door_ignores_torque_until_release_twist() {
        let mut w = world();
        w.state.handle_twist = 0.9 * w.spec.door.latch_release_angle;
        for _ in 0..10 {
            w.step(&SimAction::default()).unwrap();
        }
        assert!(w.state.latched);
        assert_eq!(w.state.door_angle, 0.0);
        // hold the twist past release (decay is 0.06 rad/step when free)
        w.state.handle_twist = 1.5 * w.spec.door.latch_release_angle;
        w.step(&SimAction::default()).unwrap();
        assert!(!w.state.latched);
    }

    #[test]
    fn latch_reengages_only_when_shut_and_untwisted() {
        let mut w = world();
        w.state.latched = false;
        w.state.door_angle = 0.4;
        for _ in 0..600 {
            w.step(&SimAction::default()).unwrap();
            if w.state.latched {
                break;
            }
        }
        assert!(w.state.latched);
        assert!(w.state.door_angle < 0.01);
        w.step(&SimAction::default()).unwrap();
        assert_eq!(w.state.door_angle, 0.0);
    }

    #[test]
    fn door_angle_never_leaves_range_and_latch_soundness_holds() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut w = world();
        let mut prev_angle = w.state.door_angle;
        let mut prev_latched = w.state.latched;
        for _ in 0..2000 {
            let a = SimAction {
                v: rng.random_range(-1.0..1.0),
                omega: rng.random_range(-2.0..2.0),
                dq: [[rng.random_range(-0.1..0.1); 3], [rng.random_range(-0.1..0.1); 3]],
                grip: [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
            };
            w.step(&a).unwrap();
            let door = &w.spec.door;
            assert!(w.state.door_angle >= 0.0 && w.state.door_angle <= door.max_open_angle);
            assert!(w.state.handle_twist >= 0.0 && w.state.handle_twist <= door.handle_twist_limit);
            if prev_angle == 0.0 && w.state.door_angle > 0.0 {
                assert!(!prev_latched, "door opened while latched");
            }
            prev_angle = w.state.door_angle;
            prev_latched = w.state.latched;
        }
    }

    #[test]
    fn trajectories_are_bit_identical() {
        let run = || {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
            let mut w = world();
            w.state.latched = false;
            w.state.door_angle = 0.3;
            let mut bits = Vec::new();
            for _ in 0..500 {
                let a = SimAction {
                    v: rng.random_range(-0.5..0.5),
                    omega: rng.random_range(-1.0..1.0),
                    dq: [[rng.random_range(-0.05..0.05); 3]; 2],
                    grip: [1.0, 1.0],
                };
                w.step(&a).unwrap();
                bits.push(w.state.base.x.to_bits());
                bits.push(w.state.door_angle.to_bits());
                bits.push(w.state.door_rate.to_bits());
            }
            bits
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn crossing_the_doorway_sets_success() {
        let mut w = world();
        assert!(!w.success());
        // teleport the door out of the way and drive straight through
        w.state.latched = false;
        w.state.door_angle = 1.6;
        let a = SimAction { v: 0.5, ..Default::default() };
        for _ in 0..400 {
            w.step(&a).unwrap();
            if w.state.crossed {
                break;
            }
        }
        assert!(w.state.crossed && w.success());
    }

    #[test]
    fn collision_latches_failure_forever() {
        let mut w = World::new(WorldSpec::default(), Pose::new(-0.4, -0.8, 0.0)).unwrap();
        // drive into the hinge-side wall
        let a = SimAction { v: 0.5, ..Default::default() };
        for _ in 0..300 {
            w.step(&a).unwrap();
        }
        assert!(w.state.collided);
        assert!(!w.success());
    }

    #[test]
    fn zero_magnitude_disturbance_changes_nothing() {
        let mut w1 = world();
        let mut w2 = world();
        w2.set_disturbance(DisturbanceScript {
            trigger: DisturbanceTrigger::SimTime(0.0),
            torque: 0.0,
            duration: 1.0,
        });
        for _ in 0..100 {
            w1.step(&SimAction::default()).unwrap();
            w2.step(&SimAction::default()).unwrap();
        }
        assert_eq!(w1.state, w2.state);
    }

    #[test]
    fn disturbance_before_grasp_keeps_door_shut() {
        let mut w = world();
        w.set_disturbance(DisturbanceScript {
            trigger: DisturbanceTrigger::SimTime(0.1),
            torque: 50.0,
            duration: 0.5,
        });
        for _ in 0..100 {
            w.step(&SimAction::default()).unwrap();
        }
        assert_eq!(w.state.door_angle, 0.0);
        assert!(w.state.latched);
    }

    #[test]
    fn strong_disturbance_breaks_grasp_and_recloses_door() {
        let mut w = world();
        // place the right gripper on the open door's handle artificially
        w.state.latched = false;
        w.state.door_angle = 0.9;
        w.state.grip[1] = 1.0;
        w.state.attach[1] = Attachment::Handle { wrist_ref: 0.0, twist_ref: 0.0 };
        w.set_disturbance(DisturbanceScript {
            trigger: DisturbanceTrigger::DoorAngle(0.5),
            torque: 80.0,
            duration: 1.0,
        });
        for _ in 0..300 {
            w.step(&SimAction { grip: [0.0, 1.0], ..Default::default() }).unwrap();
        }
        assert!(!w.state.attach[1].is_attached(), "grasp should have broken");
        assert!(w.state.door_angle < 0.05, "door should have re-closed");
    }
}
