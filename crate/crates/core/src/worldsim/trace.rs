use serde::{Deserialize, Serialize};

use super::state::{SimAction, WorldState};

/// One line of a trajectory trace export: time, full state, applied action.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub state: WorldState,
    pub action: SimAction,
}
