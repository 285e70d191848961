//! File formats for headless runs: the run configuration and the mutation
//! schedule (which is also the live-session recording format).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bc::BoundaryConditions;
use crate::fea::{Material, SolverConfig};
use crate::mesh::{build_mesh, DomainSpec, MeshTopology};
use crate::optimizer::{Optimizer, OptimizerParams};
use crate::session::MutationCommand;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed JSON in {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Everything needed to build an optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub domain: DomainSpec,
    pub elem_size: f64,
    #[serde(default)]
    pub bcs: BoundaryConditions,
    #[serde(default)]
    pub params: OptimizerParams,
    #[serde(default)]
    pub material: Material,
    #[serde(default)]
    pub solver: SolverConfig,
}

impl Problem {
    pub fn new(domain: DomainSpec, elem_size: f64) -> Self {
        Self {
            domain,
            elem_size,
            bcs: BoundaryConditions::default(),
            params: OptimizerParams::default(),
            material: Material::default(),
            solver: SolverConfig::default(),
        }
    }

    /// Unit-sized elements on an `nx × ny × nz` box.
    pub fn grid(nx: usize, ny: usize, nz: usize) -> Self {
        Self::new(DomainSpec::new(nx as f64, ny as f64, nz as f64), 1.0)
    }

    pub fn mesh(&self) -> Result<MeshTopology, ConfigError> {
        build_mesh(&self.domain, self.elem_size).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<MeshTopology, ConfigError> {
        let mesh = self.mesh()?;
        self.params.validate().map_err(ConfigError::Invalid)?;
        self.solver.validate().map_err(ConfigError::Invalid)?;
        validate_material(&self.material).map_err(ConfigError::Invalid)?;
        Ok(mesh)
    }

    pub fn build_optimizer(&self) -> Result<Optimizer, ConfigError> {
        let mesh = self.validate()?;
        Optimizer::new(mesh, self.bcs.clone(), self.params.clone(), self.material, self.solver)
            .map_err(|e| ConfigError::Invalid(e.to_string()))
    }
}

pub fn validate_material(m: &Material) -> Result<(), String> {
    if !(m.e0.is_finite() && m.e0 > 0.0) {
        return Err(format!("e0 {} must be positive", m.e0));
    }
    if !(m.emin.is_finite() && m.emin >= 0.0 && m.emin < m.e0) {
        return Err(format!("emin {} must lie in [0, e0)", m.emin));
    }
    if !(m.nu > -1.0 && m.nu < 0.5) {
        return Err(format!("nu {} outside (-1, 0.5)", m.nu));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Vtk,
    Csv,
    Frame,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputSpec {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "all_formats")]
    pub formats: Vec<OutputFormat>,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}

fn all_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Vtk, OutputFormat::Csv, OutputFormat::Frame]
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self { dir: default_dir(), formats: all_formats() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub domain: DomainSpec,
    pub elem_size: f64,
    #[serde(default)]
    pub bcs: BoundaryConditions,
    #[serde(default)]
    pub params: OptimizerParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub material: Option<Material>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverConfig>,
    #[serde(default)]
    pub outputs: OutputSpec,
}

impl RunConfig {
    pub fn from_problem(problem: &Problem, outputs: OutputSpec) -> Self {
        Self {
            domain: problem.domain.clone(),
            elem_size: problem.elem_size,
            bcs: problem.bcs.clone(),
            params: problem.params.clone(),
            material: Some(problem.material),
            solver: Some(problem.solver),
            outputs,
        }
    }

    pub fn problem(&self) -> Problem {
        Problem {
            domain: self.domain.clone(),
            elem_size: self.elem_size,
            bcs: self.bcs.clone(),
            params: self.params.clone(),
            material: self.material.unwrap_or_default(),
            solver: self.solver.unwrap_or_default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        read_json(path)
    }
}

/// A command and the sync point at which it is applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub applied_at_iteration: u32,
    pub command: MutationCommand,
}

pub type Schedule = Vec<ScheduleEntry>;

pub fn validate_schedule(schedule: &[ScheduleEntry]) -> Result<(), ConfigError> {
    let mut prev = 1;
    for (i, entry) in schedule.iter().enumerate() {
        let k = entry.applied_at_iteration;
        if k < prev {
            return Err(ConfigError::Invalid(format!("schedule entry {i}: applied_at_iteration {k} must be >= {prev}")));
        }
        entry.command.validate().map_err(|e| ConfigError::Invalid(format!("schedule entry {i}: {e}")))?;
        prev = k;
    }
    Ok(())
}

pub fn load_schedule(path: &Path) -> Result<Schedule, ConfigError> {
    let schedule: Schedule = read_json(path)?;
    validate_schedule(&schedule)?;
    Ok(schedule)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
    serde_json::from_str(&text).map_err(|source| ConfigError::Json { path: path.into(), source })
}
