use serde::{Deserialize, Serialize};

use super::spec::{ArmSpec, RobotSpec};

pub const PROPRIO_DIM: usize = 11;
pub const ACTION_DIM: usize = 10;

/// Planar pose.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw }
    }

    pub fn position(&self) -> [f64; 2] {
        [self.x, self.y]
    }

    /// Map a point from this pose's frame to the world frame.
    pub fn transform(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.yaw.sin_cos();
        [
            self.x + c * p[0] - s * p[1],
            self.y + s * p[0] + c * p[1],
        ]
    }
}

/// What a gripper is holding. Handle grasps remember the wrist angle and
/// handle twist at attach time so wrist motion maps onto the twist.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq)]
pub enum Attachment {
    #[default]
    None,
    Handle {
        wrist_ref: f64,
        twist_ref: f64,
    },
    DoorEdge,
}

impl Attachment {
    pub fn is_attached(&self) -> bool {
        !matches!(self, Attachment::None)
    }
}

/// Full simulator state. Serializable, and round-trips exactly through JSON
/// (floats are emitted in shortest round-trip form).
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct WorldState {
    pub base: Pose,
    /// Arm joint angles, left then right.
    pub joints: [[f64; 3]; 2],
    /// Gripper closures in [0, 1], left then right.
    pub grip: [f64; 2],
    /// Door angle θ (0 = closed) and rate θ̇.
    pub door_angle: f64,
    pub door_rate: f64,
    /// Handle twist φ.
    pub handle_twist: f64,
    pub latched: bool,
    /// Grasp attachment per gripper, left then right.
    pub attach: [Attachment; 2],
    /// Simulation time (s).
    pub t: f64,
    /// Sticky collision flag.
    pub collided: bool,
    /// Sticky doorway-crossing flag.
    pub crossed: bool,
}

impl WorldState {
    pub fn initial(robot: &RobotSpec, base: Pose) -> Self {
        Self {
            base,
            joints: [robot.arms[0].home_joints, robot.arms[1].home_joints],
            grip: [0.0, 0.0],
            door_angle: 0.0,
            door_rate: 0.0,
            handle_twist: 0.0,
            latched: true,
            attach: [Attachment::None, Attachment::None],
            t: 0.0,
            collided: false,
            crossed: false,
        }
    }

    /// Proprioceptive vector: base pose (3), arm joints (6), closures (2).
    /// Door state is deliberately excluded; the policy must see it.
    pub fn proprio(&self) -> [f64; PROPRIO_DIM] {
        [
            self.base.x,
            self.base.y,
            self.base.yaw,
            self.joints[0][0],
            self.joints[0][1],
            self.joints[0][2],
            self.joints[1][0],
            self.joints[1][1],
            self.joints[1][2],
            self.grip[0],
            self.grip[1],
        ]
    }

    pub fn all_finite(&self) -> Option<&'static str> {
        let checks: [(&'static str, bool); 7] = [
            ("base", self.base.x.is_finite() && self.base.y.is_finite() && self.base.yaw.is_finite()),
            ("joints", self.joints.iter().flatten().all(|v| v.is_finite())),
            ("grip", self.grip.iter().all(|v| v.is_finite())),
            ("door_angle", self.door_angle.is_finite()),
            ("door_rate", self.door_rate.is_finite()),
            ("handle_twist", self.handle_twist.is_finite()),
            ("t", self.t.is_finite()),
        ];
        checks.iter().find(|(_, ok)| !ok).map(|(f, _)| *f)
    }
}

/// One control step: base twist command, per-joint increments and gripper
/// closure targets. Total dimension 10.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct SimAction {
    /// Base linear velocity command (m/s).
    pub v: f64,
    /// Base angular velocity command (rad/s).
    pub omega: f64,
    /// Joint increments for this step, left then right (rad).
    pub dq: [[f64; 3]; 2],
    /// Gripper closure targets in [0, 1], left then right.
    pub grip: [f64; 2],
}

impl SimAction {
    /// Flatten in the canonical order `[v, ω, dqL0..2, dqR0..2, gL, gR]`.
    pub fn to_vec(&self) -> [f64; ACTION_DIM] {
        [
            self.v,
            self.omega,
            self.dq[0][0],
            self.dq[0][1],
            self.dq[0][2],
            self.dq[1][0],
            self.dq[1][1],
            self.dq[1][2],
            self.grip[0],
            self.grip[1],
        ]
    }

    pub fn from_vec(v: &[f64; ACTION_DIM]) -> Self {
        Self {
            v: v[0],
            omega: v[1],
            dq: [[v[2], v[3], v[4]], [v[5], v[6], v[7]]],
            grip: [v[8], v[9]],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }

    /// Clamp every component to its actuator limit for step `dt`.
    pub fn clamped(&self, robot: &RobotSpec, dt: f64) -> Self {
        let mut out = *self;
        out.v = out.v.clamp(-robot.max_linear_speed, robot.max_linear_speed);
        out.omega = out
            .omega
            .clamp(-robot.max_angular_speed, robot.max_angular_speed);
        for (arm, dq) in robot.arms.iter().zip(out.dq.iter_mut()) {
            let step = arm.joint_rate_limit * dt;
            for d in dq.iter_mut() {
                *d = d.clamp(-step, step);
            }
        }
        for g in out.grip.iter_mut() {
            *g = g.clamp(0.0, 1.0);
        }
        out
    }
}

/// Forward kinematics of one arm given the base pose. Returns the three
/// joint points plus the gripper point and absolute wrist angle.
pub fn arm_forward(base: &Pose, arm: &ArmSpec, q: &[f64; 3]) -> ([[f64; 2]; 4], f64) {
    let mount = base.transform(arm.mount_offset);
    let mut pts = [[0.0; 2]; 4];
    pts[0] = mount;
    let mut angle = base.yaw;
    let mut p = mount;
    for i in 0..3 {
        angle += q[i];
        p = [
            p[0] + arm.link_lengths[i] * angle.cos(),
            p[1] + arm.link_lengths[i] * angle.sin(),
        ];
        pts[i + 1] = p;
    }
    (pts, angle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_round_trips_exactly_through_json() {
        let robot = RobotSpec::default();
        let mut s = WorldState::initial(&robot, Pose::new(-0.9, 0.45, 0.3));
        s.door_angle = 0.123456789123456789;
        s.door_rate = -1.0 / 3.0;
        s.attach[1] = Attachment::Handle {
            wrist_ref: std::f64::consts::PI / 7.0,
            twist_ref: 0.01,
        };
        let text = serde_json::to_string(&s).unwrap();
        let back: WorldState = serde_json::from_str(&text).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn action_vector_round_trip_and_clamp() {
        let a = SimAction {
            v: 9.0,
            omega: -9.0,
            dq: [[1.0, -1.0, 0.0], [0.2, 0.0, -0.2]],
            grip: [2.0, -1.0],
        };
        assert_eq!(SimAction::from_vec(&a.to_vec()), a);
        let robot = RobotSpec::default();
        let c = a.clamped(&robot, 0.02);
        assert_eq!(c.v, robot.max_linear_speed);
        assert_eq!(c.omega, -robot.max_angular_speed);
        assert_eq!(c.dq[0][0], robot.arms[0].joint_rate_limit * 0.02);
        assert_eq!(c.grip, [1.0, 0.0]);
    }

    #[test]
    fn straight_arm_forward_kinematics() {
        let base = Pose::new(0.0, 0.0, 0.0);
        let arm = ArmSpec {
            mount_offset: [0.0, 0.0],
            link_lengths: [0.35, 0.30, 0.10],
            joint_limit: 3.0,
            joint_rate_limit: 2.5,
            home_joints: [0.0; 3],
        };
        let (pts, wrist) = arm_forward(&base, &arm, &[0.0, 0.0, 0.0]);
        assert!((pts[3][0] - 0.75).abs() < 1e-12 && pts[3][1].abs() < 1e-12);
        assert_eq!(wrist, 0.0);
    }
}
