//! Live-run orchestration: a command queue drained at iteration boundaries,
//! the session lifecycle, and immutable snapshots.

mod command;
mod engine;
mod live;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bc::BoundaryConditions;
use crate::frame::DensityFrame;
use crate::mesh::{DomainSpec, MeshTopology};
use crate::optimizer::{IterationReport, OptimizerParams};

pub use command::{MutationCommand, Preset};
pub use engine::SessionCore;
pub use live::{Observer, Session};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Configuring,
    Running,
    Finished,
    Stopped,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Configuring => "configuring",
            Phase::Running => "running",
            Phase::Finished => "finished",
            Phase::Stopped => "stopped",
        })
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SessionError {
    #[error("{0}")]
    BadEntity(String),
    #[error("{0}")]
    BadValue(String),
    #[error("{0}")]
    BadPhase(String),
    #[error("SingularSystem: the clamped entities do not suppress rigid-body motion")]
    SingularSystem,
    #[error("ZeroLoad: no traction is applied")]
    ZeroLoad,
}

impl SessionError {
    /// Protocol error code.
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::BadEntity(_) => "bad_entity",
            SessionError::BadPhase(_) => "bad_phase",
            SessionError::BadValue(_) | SessionError::SingularSystem | SessionError::ZeroLoad => "bad_value",
        }
    }
}

/// The sync point at which an accepted command takes effect; 0 means it was
/// applied immediately because no run was in progress.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ack {
    pub applies_at: u32,
}

/// Immutable view of the session after an iteration or configuration change.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    /// Publication counter, strictly increasing per session.
    pub seq: u64,
    pub iter: u32,
    pub phase: Phase,
    /// `(iter, compliance)` of every completed iteration.
    pub history: Vec<(u32, f64)>,
    pub last: Option<IterationReport>,
    pub volume: f64,
    pub params: OptimizerParams,
    pub bcs: BoundaryConditions,
    pub mesh: MeshTopology,
    pub domain: DomainSpec,
    pub elem_size: f64,
    pub frame: DensityFrame,
    pub x_phys: Arc<[f64]>,
    pub error: Option<String>,
}
