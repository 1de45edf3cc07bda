//! Scripted demonstrator: a stage machine that coordinates damped-least-
//! squares IK for the two arms with an iLQR receding-horizon controller for
//! the nonholonomic base, plus a task-space scheduler that creeps gripper
//! targets toward keyframes at bounded speed.

mod ik;
mod mpc;
mod stages;

pub use ik::{forward_kinematics, ik_solve, project_reachable, GripperTarget, IkConfig};
pub use mpc::{mpc_track, MpcConfig, MpcSolution};
pub use stages::{door_arc_target, Expert, ExpertConfig, Stage, StageEvent};


use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExpertError {
    #[error("ik failure in {context}: residual {residual:.6} m after {iterations} iterations")]
    IkFailure {
        context: &'static str,
        residual: f64,
        iterations: usize,
    },
    #[error("ik target unreachable in {context}: distance {distance:.3} m outside [{min:.3}, {max:.3}]")]
    IkUnreachable {
        context: &'static str,
        distance: f64,
        min: f64,
        max: f64,
    },
    #[error("mpc divergence: {0}")]
    MpcDivergence(String),
    #[error("simulation error in stage {stage:?}: {source}")]
    Sim {
        stage: stages::Stage,
        #[source]
        source: crate::worldsim::SimError,
    },
}
