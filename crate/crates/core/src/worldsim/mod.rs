//! Deterministic fixed-step planar world: a differential-drive base carrying
//! two 3-link planar arms in front of a damped, latched, self-closing pull
//! door, plus synthetic multi-view rasters and scripted disturbances.
//!
//! Geometry: the door hinge sits at the origin and the closed panel runs
//! along +y; the robot works the pull side (x < 0) and succeeds by crossing
//! the doorway segment between hinge and frame post. Only the door has
//! dynamics; the base and arms are rate-limited kinematics, which keeps every
//! step exactly reproducible.

mod render;
mod sim;
mod spec;
mod state;
mod trace;

pub use render::{render_views, Raster, RASTER_SIZE};
pub use sim::{door_energy, World};
pub use spec::{
    AppearanceSpec, ArmSpec, DisturbanceScript, DisturbanceTrigger, DoorSpec, RobotSpec, WorldSpec,
};
pub use state::{arm_forward, Attachment, Pose, SimAction, WorldState, ACTION_DIM, PROPRIO_DIM};
pub use trace::TraceRecord;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("simulation blowup: non-finite `{field}` at t={t:.3}s")]
    Blowup { field: &'static str, t: f64 },
    #[error("non-finite action component `{0}`")]
    BadAction(&'static str),
    #[error("invalid world spec: {0}")]
    BadSpec(String),
}
