//! Damped-least-squares inverse kinematics for the planar 3-link arms.

use nalgebra::{Matrix3, Vector3};

use crate::worldsim::{ArmSpec, Pose};

use super::ExpertError;

/// Desired gripper pose: planar position plus absolute wrist angle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GripperTarget {
    pub pos: [f64; 2],
    pub wrist: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct IkConfig {
    /// DLS damping λ.
    pub lambda: f64,
    pub max_iterations: usize,
    /// Position tolerance (m).
    pub pos_tolerance: f64,
    /// Wrist orientation tolerance (rad).
    pub wrist_tolerance: f64,
    /// Per-iteration joint step clamp (rad).
    pub step_clamp: f64,
}

impl Default for IkConfig {
    fn default() -> Self {
        Self {
            lambda: 0.05,
            max_iterations: 100,
            pos_tolerance: 1e-3,
            wrist_tolerance: 0.02,
            step_clamp: 0.2,
        }
    }
}

fn wrap(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    } else if a < -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}

/// Gripper position and wrist angle for joints `q`.
pub fn forward_kinematics(arm: &ArmSpec, base: &Pose, q: &[f64; 3]) -> ([f64; 2], f64) {
    let (pts, wrist) = crate::worldsim::arm_forward(base, arm, q);
    (pts[3], wrist)
}

/// Reachability bounds for the wrist-base point (gripper position minus the
/// final link along the wrist direction).
fn annulus(arm: &ArmSpec) -> (f64, f64) {
    let (l1, l2) = (arm.link_lengths[0], arm.link_lengths[1]);
    ((l1 - l2).abs(), l1 + l2)
}

/// Clamp a target into the reachable annulus (with margin) so scheduled
/// keyframes never hand the solver an impossible pose.
pub fn project_reachable(arm: &ArmSpec, base: &Pose, target: &GripperTarget) -> GripperTarget {
    let mount = base.transform(arm.mount_offset);
    let l3 = arm.link_lengths[2];
    let (wx, wy) = (target.wrist.cos(), target.wrist.sin());
    let wb = [target.pos[0] - l3 * wx, target.pos[1] - l3 * wy];
    let (rmin, rmax) = annulus(arm);
    let (rmin, rmax) = (rmin + 1e-3, rmax - 1e-3);
    let d = ((wb[0] - mount[0]).powi(2) + (wb[1] - mount[1]).powi(2)).sqrt();
    if d >= rmin && d <= rmax {
        return *target;
    }
    let r = d.clamp(rmin, rmax);
    let (ux, uy) = if d > 1e-9 {
        ((wb[0] - mount[0]) / d, (wb[1] - mount[1]) / d)
    } else {
        (1.0, 0.0)
    };
    GripperTarget {
        pos: [mount[0] + r * ux + l3 * wx, mount[1] + r * uy + l3 * wy],
        wrist: target.wrist,
    }
}

/// Iterative damped-least-squares IK: q ← q + Jᵀ(JJᵀ + λ²I)⁻¹ e with a
/// per-iteration step clamp. The caller's seed is tried first, then the two
/// analytic elbow configurations; each candidate is polished by DLS until
/// the gripper is within the position and wrist tolerances.
pub fn ik_solve(
    arm: &ArmSpec,
    base: &Pose,
    target: &GripperTarget,
    seed: &[f64; 3],
    cfg: &IkConfig,
) -> Result<[f64; 3], ExpertError> {
    let mount = base.transform(arm.mount_offset);
    let (l1, l2, l3) = (arm.link_lengths[0], arm.link_lengths[1], arm.link_lengths[2]);
    let wb = [
        target.pos[0] - l3 * target.wrist.cos(),
        target.pos[1] - l3 * target.wrist.sin(),
    ];
    let (rmin, rmax) = annulus(arm);
    let d = ((wb[0] - mount[0]).powi(2) + (wb[1] - mount[1]).powi(2)).sqrt();
    if d < rmin - 1e-9 || d > rmax + 1e-9 {
        return Err(ExpertError::IkUnreachable {
            context: "ik_solve",
            distance: d,
            min: rmin,
            max: rmax,
        });
    }

    // analytic 2-link solutions for the wrist-base point, both elbows
    let phi = (wb[1] - mount[1]).atan2(wb[0] - mount[0]) - base.yaw;
    let cos_elbow = ((d * d - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let elbow = cos_elbow.acos();
    let mut candidates = [*seed, *seed, *seed];
    for (slot, e) in [(1usize, elbow), (2usize, -elbow)] {
        let q1 = wrap(phi - (l2 * e.sin()).atan2(l1 + l2 * e.cos()));
        let q3 = wrap(target.wrist - base.yaw - q1 - e);
        candidates[slot] = [
            q1.clamp(-arm.joint_limit, arm.joint_limit),
            e.clamp(-arm.joint_limit, arm.joint_limit),
            q3.clamp(-arm.joint_limit, arm.joint_limit),
        ];
    }

    let lambda2 = cfg.lambda * cfg.lambda;
    let mut best_residual = f64::INFINITY;
    for candidate in candidates {
        let mut q = candidate;
        for _ in 0..cfg.max_iterations {
            let (pts, wrist) = crate::worldsim::arm_forward(base, arm, &q);
            let tip = pts[3];
            let e = Vector3::new(
                target.pos[0] - tip[0],
                target.pos[1] - tip[1],
                wrap(target.wrist - wrist),
            );
            let residual = (e[0] * e[0] + e[1] * e[1]).sqrt();
            if residual < cfg.pos_tolerance && e[2].abs() < cfg.wrist_tolerance {
                return Ok(q);
            }
            best_residual = best_residual.min(residual);
            // planar jacobian: column i is perp(tip − joint_i) over position,
            // 1 over wrist angle
            let mut j = Matrix3::zeros();
            for c in 0..3 {
                j[(0, c)] = -(tip[1] - pts[c][1]);
                j[(1, c)] = tip[0] - pts[c][0];
                j[(2, c)] = 1.0;
            }
            let jjt = j * j.transpose() + Matrix3::identity() * lambda2;
            let Some(inv) = jjt.try_inverse() else {
                break;
            };
            let dq = j.transpose() * (inv * e);
            for i in 0..3 {
                q[i] = (q[i] + dq[i].clamp(-cfg.step_clamp, cfg.step_clamp))
                    .clamp(-arm.joint_limit, arm.joint_limit);
            }
        }
    }
    Err(ExpertError::IkFailure {
        context: "ik_solve",
        residual: best_residual,
        iterations: cfg.max_iterations,
    })
}
