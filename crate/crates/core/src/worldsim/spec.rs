use serde::{Deserialize, Serialize};

use super::SimError;

/// Door mechanics. Angles in rad, lengths in m, torques in N·m.
///
/// The door obeys `I·θ̈ = −damping·θ̇ − stiffness·θ + τ` while unlatched and
/// is frozen at θ = 0 while the latch is engaged. Defaults give a heavy,
/// damped feel: unforced closing from 90° takes a few seconds.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DoorSpec {
    /// Hinge position in the world frame (m).
    pub hinge_position: [f64; 2],
    /// Panel length from hinge to free edge (m).
    pub panel_length: f64,
    /// Rotational inertia about the hinge (kg·m²).
    pub door_inertia: f64,
    /// Viscous damping (N·m·s/rad).
    pub damping: f64,
    /// Self-closing return spring (N·m/rad).
    pub spring_stiffness: f64,
    /// Handle twist needed to release the latch (rad).
    pub latch_release_angle: f64,
    /// Handle position along the panel, measured from the hinge (m).
    pub handle_offset: f64,
    /// Door angle ceiling (rad); θ = 0 is closed.
    pub max_open_angle: f64,
    /// Handle twist ceiling (rad).
    pub handle_twist_limit: f64,
    /// Handle spring-return rate when ungrasped (rad/s).
    pub handle_return_rate: f64,
}

impl Default for DoorSpec {
    fn default() -> Self {
        Self {
            hinge_position: [0.0, 0.0],
            panel_length: 0.9,
            door_inertia: 5.0,
            damping: 8.0,
            spring_stiffness: 3.0,
            latch_release_angle: 0.35,
            handle_offset: 0.8,
            max_open_angle: 1.9,
            handle_twist_limit: 1.2,
            handle_return_rate: 3.0,
        }
    }
}

impl DoorSpec {
    /// Unit vector along the panel at door angle θ (+y when closed, swinging
    /// toward the pull side −x as θ grows).
    pub fn panel_dir(&self, theta: f64) -> [f64; 2] {
        [-theta.sin(), theta.cos()]
    }

    /// World position of a point `offset` metres along the panel.
    pub fn panel_point(&self, theta: f64, offset: f64) -> [f64; 2] {
        let d = self.panel_dir(theta);
        [
            self.hinge_position[0] + d[0] * offset,
            self.hinge_position[1] + d[1] * offset,
        ]
    }

    /// World position of the handle at door angle θ.
    pub fn handle_point(&self, theta: f64) -> [f64; 2] {
        self.panel_point(theta, self.handle_offset)
    }

    /// World position of the panel free edge at door angle θ.
    pub fn edge_point(&self, theta: f64) -> [f64; 2] {
        self.panel_point(theta, self.panel_length)
    }

    /// Velocity of a panel point at angular rate θ̇.
    pub fn panel_point_velocity(&self, theta: f64, theta_dot: f64, offset: f64) -> [f64; 2] {
        [
            -theta.cos() * offset * theta_dot,
            -theta.sin() * offset * theta_dot,
        ]
    }

    fn validate(&self) -> Result<(), SimError> {
        if self.damping <= 0.0 || self.spring_stiffness <= 0.0 {
            return Err(SimError::BadSpec(
                "door damping and spring_stiffness must be > 0".into(),
            ));
        }
        if self.handle_offset <= 0.0 || self.handle_offset > self.panel_length {
            return Err(SimError::BadSpec(
                "handle_offset must lie in (0, panel_length]".into(),
            ));
        }
        if self.door_inertia <= 0.0 || self.max_open_angle <= 0.0 {
            return Err(SimError::BadSpec("door inertia/max angle must be > 0".into()));
        }
        Ok(())
    }
}

/// One planar 3-link arm.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    /// Mount offset in the base frame (m).
    pub mount_offset: [f64; 2],
    /// Link lengths shoulder→wrist (m).
    pub link_lengths: [f64; 3],
    /// Symmetric joint limit (rad).
    pub joint_limit: f64,
    /// Joint rate limit (rad/s), enforced every step.
    pub joint_rate_limit: f64,
    /// Joint angles the arm parks at when idle (rad).
    pub home_joints: [f64; 3],
}

/// Robot platform: differential-drive base plus two arms and grippers.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RobotSpec {
    pub base_radius: f64,
    pub max_linear_speed: f64,
    pub max_angular_speed: f64,
    /// Left (index 0) and right (index 1) arms.
    pub arms: [ArmSpec; 2],
    /// Grippers attach within this distance of a grasp point (m).
    pub gripper_capture_radius: f64,
    /// Coupling force that breaks a grasp (N).
    pub grasp_break_force: f64,
    /// Gripper closure rate (fraction/s).
    pub gripper_rate: f64,
}

impl Default for RobotSpec {
    fn default() -> Self {
        Self {
            base_radius: 0.22,
            max_linear_speed: 0.5,
            max_angular_speed: 1.8,
            arms: [
                ArmSpec {
                    mount_offset: [0.08, 0.10],
                    link_lengths: [0.35, 0.30, 0.10],
                    joint_limit: 3.2,
                    joint_rate_limit: 2.5,
                    home_joints: [2.2, 0.9, 0.0],
                },
                ArmSpec {
                    mount_offset: [0.08, -0.10],
                    link_lengths: [0.35, 0.30, 0.10],
                    joint_limit: 3.2,
                    joint_rate_limit: 2.5,
                    home_joints: [-2.2, -0.9, 0.0],
                },
            ],
            gripper_capture_radius: 0.03,
            grasp_break_force: 60.0,
            gripper_rate: 4.0,
        }
    }
}

impl RobotSpec {
    fn validate(&self) -> Result<(), SimError> {
        let ok = self.base_radius > 0.0
            && self.max_linear_speed > 0.0
            && self.max_angular_speed > 0.0
            && self.gripper_capture_radius > 0.0
            && self.grasp_break_force > 0.0
            && self.gripper_rate > 0.0
            && self.arms.iter().all(|a| {
                a.link_lengths.iter().all(|&l| l > 0.0)
                    && a.joint_limit > 0.0
                    && a.joint_rate_limit > 0.0
            });
        if ok {
            Ok(())
        } else {
            Err(SimError::BadSpec("robot lengths, limits and radii must be > 0".into()))
        }
    }
}

/// Per-episode raster intensities, all in [0, 1] after the brightness gain.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AppearanceSpec {
    pub door_intensity: f64,
    pub handle_intensity: f64,
    pub background_intensity: f64,
    pub brightness_gain: f64,
}

impl Default for AppearanceSpec {
    fn default() -> Self {
        Self {
            door_intensity: 0.85,
            handle_intensity: 0.30,
            background_intensity: 0.10,
            brightness_gain: 1.0,
        }
    }
}

/// Condition that fires a disturbance.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub enum DisturbanceTrigger {
    /// Fire once the door opens past this angle (rad).
    DoorAngle(f64),
    /// Fire at this simulation time (s).
    SimTime(f64),
}

/// Scripted external interference: a closing torque applied to the door for
/// a fixed duration once the trigger condition is met. At most one script is
/// active per episode.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct DisturbanceScript {
    pub trigger: DisturbanceTrigger,
    /// Closing torque magnitude (N·m).
    pub torque: f64,
    /// Application duration (s).
    pub duration: f64,
}

impl DisturbanceScript {
    /// Parse the CLI shorthand, e.g. `close@0.5rad`, `close@6.0s`,
    /// `close@0.5rad:torque=80:dur=1.0`.
    pub fn parse(text: &str) -> Result<Self, String> {
        let rest = text
            .strip_prefix("close@")
            .ok_or_else(|| format!("expected `close@<value><rad|s>[...]`, got `{text}`"))?;
        let mut parts = rest.split(':');
        let head = parts.next().unwrap_or_default();
        let trigger = if let Some(v) = head.strip_suffix("rad") {
            DisturbanceTrigger::DoorAngle(v.parse::<f64>().map_err(|e| e.to_string())?)
        } else if let Some(v) = head.strip_suffix('s') {
            DisturbanceTrigger::SimTime(v.parse::<f64>().map_err(|e| e.to_string())?)
        } else {
            return Err(format!("trigger `{head}` must end in `rad` or `s`"));
        };
        let mut script = Self {
            trigger,
            torque: 80.0,
            duration: 1.0,
        };
        for part in parts {
            if let Some(v) = part.strip_prefix("torque=") {
                script.torque = v.parse::<f64>().map_err(|e| e.to_string())?;
            } else if let Some(v) = part.strip_prefix("dur=") {
                script.duration = v.parse::<f64>().map_err(|e| e.to_string())?;
            } else {
                return Err(format!("unknown disturbance option `{part}`"));
            }
        }
        if !script.torque.is_finite() || !script.duration.is_finite() || script.duration < 0.0 {
            return Err("torque/duration must be finite, duration >= 0".into());
        }
        match script.trigger {
            DisturbanceTrigger::DoorAngle(a) if !a.is_finite() => {
                return Err("trigger angle must be finite".into())
            }
            DisturbanceTrigger::SimTime(t) if !t.is_finite() => {
                return Err("trigger time must be finite".into())
            }
            _ => {}
        }
        Ok(script)
    }
}

/// Full world description: door, robot, walls, integration step and the
/// grasp coupling model.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSpec {
    pub door: DoorSpec,
    pub robot: RobotSpec,
    /// Fixed integration and control step (s).
    pub dt: f64,
    /// Episode time limit (s).
    pub time_limit: f64,
    /// Wall length extending from hinge (−y) and frame post (+y).
    pub wall_extent: f64,
    /// Virtual grasp spring stiffness (N/m).
    pub grasp_stiffness: f64,
    /// Virtual grasp damping (N·s/m).
    pub grasp_damping: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            door: DoorSpec::default(),
            robot: RobotSpec::default(),
            dt: 0.02,
            time_limit: 30.0,
            wall_extent: 1.5,
            grasp_stiffness: 600.0,
            grasp_damping: 40.0,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        self.door.validate()?;
        self.robot.validate()?;
        if self.dt <= 0.0 || self.time_limit <= 0.0 {
            return Err(SimError::BadSpec("dt and time_limit must be > 0".into()));
        }
        if self.grasp_stiffness <= 0.0 || self.grasp_damping < 0.0 {
            return Err(SimError::BadSpec("grasp coupling must be positive".into()));
        }
        Ok(())
    }

    /// Doorway segment: the closed-door plane between hinge and frame post.
    pub fn doorway(&self) -> ([f64; 2], [f64; 2]) {
        let h = self.door.hinge_position;
        (h, [h[0], h[1] + self.door.panel_length])
    }

    /// The two wall segments flanking the doorway.
    pub fn walls(&self) -> [([f64; 2], [f64; 2]); 2] {
        let h = self.door.hinge_position;
        let top = h[1] + self.door.panel_length;
        [
            (h, [h[0], h[1] - self.wall_extent]),
            ([h[0], top], [h[0], top + self.wall_extent]),
        ]
    }
}
