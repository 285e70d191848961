//! Linear elasticity on the voxel mesh.

mod direct;
mod operator;
mod pcg;
mod stiffness;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec;
use crate::mesh::MeshTopology;

pub use operator::System;
pub use stiffness::{hex8_stiffness, ElementStiffness, ELEMENT_DOFS};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SolveError {
    #[error("stiffness matrix is singular (clamping does not suppress rigid-body motion)")]
    SingularSystem,
    #[error("PCG did not converge: {iterations} iterations, relative residual {residual:e}")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("invalid element parameters: {0}")]
    InvalidElement(String),
}

/// Modified-SIMP material constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Material {
    pub e0: f64,
    pub emin: f64,
    pub nu: f64,
}

impl Default for Material {
    fn default() -> Self {
        Self { e0: 1.0, emin: 1e-9, nu: 0.3 }
    }
}

/// `E = Emin + x^p (E0 − Emin)`.
#[inline]
pub fn element_young(x_phys: f64, material: &Material, penal: f64) -> f64 {
    material.emin + x_phys.powf(penal) * (material.e0 - material.emin)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMode {
    Direct,
    Pcg,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub mode: SolverMode,
    pub pcg_tol: f64,
    /// `None` uses `max(500, 10·sqrt(dof_count))`.
    pub pcg_maxit: Option<usize>,
    pub warm_start: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { mode: SolverMode::Pcg, pcg_tol: 1e-8, pcg_maxit: None, warm_start: true }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.pcg_tol > 0.0 && self.pcg_tol < 1.0) {
            return Err(format!("pcg_tol {} outside (0, 1)", self.pcg_tol));
        }
        if self.pcg_maxit == Some(0) {
            return Err("pcg_maxit must be >= 1".into());
        }
        Ok(())
    }

    pub fn max_iterations(&self, dof_count: usize) -> usize {
        self.pcg_maxit.unwrap_or_else(|| ((10.0 * (dof_count as f64).sqrt()) as usize).max(500))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    /// Displacements for every DOF; exactly zero on inactive DOFs.
    pub u: Vec<f64>,
    pub mode: SolverMode,
    /// CG iterations (0 for the direct solver).
    pub iterations: usize,
    /// Σ over operator applications of the number of included elements.
    pub element_ops: u64,
    pub residual: f64,
    /// The load on free DOFs was zero; `u` is the zero field.
    pub zero_load: bool,
}

fn precheck(system: &System<'_>, mode: SolverMode) -> Result<Option<Solution>, SolveError> {
    if !system.is_clamped_enough() {
        return Err(SolveError::SingularSystem);
    }
    if system.masked_force().iter().all(|f| *f == 0.0) {
        log::warn!("zero load on free DOFs; returning the zero displacement field");
        return Ok(Some(Solution {
            u: vec![0.0; system.dof_count()],
            mode,
            iterations: 0,
            element_ops: 0,
            residual: 0.0,
            zero_load: true,
        }));
    }
    Ok(None)
}

pub fn solve_direct(system: &System<'_>) -> Result<Solution, SolveError> {
    if let Some(zero) = precheck(system, SolverMode::Direct)? {
        return Ok(zero);
    }
    let u = direct::solve(system)?;
    let residual = system.relative_residual(&u);
    Ok(Solution { u, mode: SolverMode::Direct, iterations: 0, element_ops: 0, residual, zero_load: false })
}

pub fn solve_pcg(system: &System<'_>, config: &SolverConfig, u0: Option<&[f64]>) -> Result<Solution, SolveError> {
    if let Some(zero) = precheck(system, SolverMode::Pcg)? {
        return Ok(zero);
    }
    let out = pcg::solve(system, config, u0)?;
    Ok(Solution {
        u: out.u,
        mode: SolverMode::Pcg,
        iterations: out.iterations,
        element_ops: out.element_ops,
        residual: out.residual,
        zero_load: false,
    })
}

/// `ce = ueᵀ·ke·ue` per element (energy per unit modulus).
pub fn element_strain_energies(u: &[f64], mesh: &MeshTopology, ke: &ElementStiffness) -> Vec<f64> {
    exec::map_indexed(mesh.element_count(), |e| {
        let nodes = mesh.element_nodes_unchecked(e);
        let mut ue = [0.0; ELEMENT_DOFS];
        for (j, n) in nodes.iter().enumerate() {
            ue[3 * j..3 * j + 3].copy_from_slice(&u[3 * n..3 * n + 3]);
        }
        ke.energy(&ue)
    })
}

/// `c = fᵀu`.
pub fn compliance(u: &[f64], f: &[f64]) -> f64 {
    assert_eq!(u.len(), f.len(), "displacement and force lengths differ");
    exec::dot(f, u)
}

/// Whether the fully clamped nodes of `clamped` (a DOF mask) are enough to
/// suppress rigid-body motion: at least three non-collinear nodes.
pub fn supports_rigid_body(mesh: &MeshTopology, clamped: &[bool]) -> bool {
    System::is_supported(clamped, mesh)
}

/// Mask over all DOFs marking the clamped ones.
pub fn clamped_mask(mesh: &MeshTopology, clamped_dofs: &[usize]) -> Vec<bool> {
    let mut mask = vec![false; mesh.dof_count()];
    for &d in clamped_dofs {
        mask[d] = true;
    }
    mask
}
