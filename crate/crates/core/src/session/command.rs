use serde::{Deserialize, Serialize};

use crate::bc::BoundaryConditions;
use crate::mesh::BoundaryEntity;
use crate::optimizer::{validate_maxiter, validate_volfrac};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Cantilever,
    Bridge,
}

impl Preset {
    pub fn bcs(self) -> BoundaryConditions {
        match self {
            Preset::Cantilever => BoundaryConditions::preset_cantilever(),
            Preset::Bridge => BoundaryConditions::preset_bridge(),
        }
    }
}

/// A state change queued for the next sync point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum MutationCommand {
    TapEntity { entity: BoundaryEntity },
    DragEntity { entity: BoundaryEntity, force: [f64; 3] },
    ApplyPreset { preset: Preset },
    SetVolfrac { value: f64 },
    SetMaxIter { value: u32 },
    SetRemoveVoids { value: bool },
    SetIterativeSolver { value: bool },
    Stop,
    Reset,
}

impl MutationCommand {
    /// Payload checks that do not depend on session state.
    pub fn validate(&self) -> Result<(), String> {
        match self {
            MutationCommand::DragEntity { force, .. } if !force.iter().all(|f| f.is_finite()) => {
                Err(format!("force must be finite, got {force:?}"))
            }
            MutationCommand::SetVolfrac { value } => validate_volfrac(*value),
            MutationCommand::SetMaxIter { value } => validate_maxiter(*value),
            _ => Ok(()),
        }
    }
}
