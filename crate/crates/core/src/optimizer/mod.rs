//! The SIMP/OC loop: filter, solve, sensitivities, filtered sensitivities,
//! OC update, optional void removal.

mod oc;
mod params;

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bc::BoundaryConditions;
use crate::fea::{
    self, clamped_mask, element_strain_energies, element_young, hex8_stiffness, ElementStiffness, Material,
    SolveError, SolverConfig, SolverMode, System,
};
use crate::filter::{DensityFilter, FilterError};
use crate::mesh::MeshTopology;

pub use oc::{mean, move_bounds, physical_densities, physical_volume, OcProblem, OcResult, LAMBDA_REL_TOL, MAX_DOUBLINGS};
pub use params::{validate_maxiter, validate_volfrac, OptimizerParams};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum OptimizeError {
    #[error("invalid optimizer parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("OC bisection found no bracket for the volume multiplier (degenerate sensitivities)")]
    BisectionFailure,
}

/// Design state per element.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub x: Vec<f64>,
    /// Filtered densities of `x`, forced to 0 on passive voids.
    pub x_phys: Vec<f64>,
    pub passive: Vec<bool>,
    pub low_count: Vec<u32>,
}

impl DensityField {
    pub fn passive_count(&self) -> usize {
        self.passive.iter().filter(|p| **p).count()
    }

    /// Mean of `x_phys` over every element.
    pub fn volume(&self) -> f64 {
        mean(&self.x_phys)
    }
}

/// Uniform design at the target volume fraction.
pub fn init_densities(mesh: &MeshTopology, params: &OptimizerParams) -> Result<DensityField, OptimizeError> {
    params.validate().map_err(OptimizeError::InvalidParams)?;
    let n = mesh.element_count();
    Ok(DensityField {
        x: vec![params.volfrac; n],
        x_phys: vec![params.volfrac; n],
        passive: vec![false; n],
        low_count: vec![0; n],
    })
}

/// Compliance sensitivities with respect to the physical densities and the
/// volume sensitivities (volume measured as mean density).
pub fn sensitivities(x_phys: &[f64], ce: &[f64], params: &OptimizerParams, material: &Material) -> (Vec<f64>, Vec<f64>) {
    let p = params.penal;
    let de = material.e0 - material.emin;
    let dc = x_phys.iter().zip(ce).map(|(&x, &c)| -p * x.powf(p - 1.0) * de * c.max(0.0)).collect();
    let dv = vec![1.0 / x_phys.len() as f64; x_phys.len()];
    (dc, dv)
}

/// Advances the low-density counters and freezes elements that stayed below
/// the threshold for `void_patience` consecutive iterations. Returns the
/// number of newly passive elements.
pub fn apply_void_removal(field: &mut DensityField, params: &OptimizerParams) -> usize {
    let mut newly = 0;
    for e in 0..field.x.len() {
        if field.passive[e] {
            continue;
        }
        if field.x_phys[e] < params.void_threshold {
            field.low_count[e] += 1;
            if field.low_count[e] >= params.void_patience {
                field.passive[e] = true;
                field.x[e] = 0.0;
                field.x_phys[e] = 0.0;
                newly += 1;
            }
        } else {
            field.low_count[e] = 0;
        }
    }
    newly
}

pub fn has_converged(report: &IterationReport, params: &OptimizerParams) -> bool {
    report.change < params.change_tol || report.iter >= params.maxiter
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iter: u32,
    pub compliance: f64,
    /// Mean physical density of the design that was analyzed.
    pub volume: f64,
    /// `‖x_new − x_old‖∞`.
    pub change: f64,
    pub solver: SolverMode,
    pub solver_iterations: usize,
    pub element_ops: u64,
    pub passive: usize,
    #[serde(skip)]
    pub wall_time: Duration,
}

/// Objective and filtered gradient of one design.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub x_phys: Vec<f64>,
    pub solution: fea::Solution,
    pub compliance: f64,
    /// Gradients with respect to the design variables (after the adjoint filter).
    pub dc: Vec<f64>,
    pub dv: Vec<f64>,
}

/// Owns the analysis context and design state of one optimization run.
#[derive(Debug, Clone)]
pub struct Optimizer {
    mesh: MeshTopology,
    ke: ElementStiffness,
    filter: DensityFilter,
    material: Material,
    solver: SolverConfig,
    params: OptimizerParams,
    bcs: BoundaryConditions,
    force: Vec<f64>,
    clamped: Vec<bool>,
    field: DensityField,
    warm: Option<Vec<f64>>,
    iter: u32,
}

impl Optimizer {
    pub fn new(
        mesh: MeshTopology,
        bcs: BoundaryConditions,
        params: OptimizerParams,
        material: Material,
        solver: SolverConfig,
    ) -> Result<Self, OptimizeError> {
        solver.validate().map_err(OptimizeError::InvalidParams)?;
        let ke = hex8_stiffness(mesh.h, material.nu)?;
        let filter = DensityFilter::new(&mesh, params.rmin)?;
        let field = init_densities(&mesh, &params)?;
        let force = bcs.assemble_force(&mesh);
        let clamped = clamped_mask(&mesh, &bcs.clamped_dofs(&mesh));
        Ok(Self { mesh, ke, filter, material, solver, params, bcs, force, clamped, field, warm: None, iter: 0 })
    }

    pub fn mesh(&self) -> &MeshTopology {
        &self.mesh
    }

    pub fn params(&self) -> &OptimizerParams {
        &self.params
    }

    pub fn bcs(&self) -> &BoundaryConditions {
        &self.bcs
    }

    pub fn material(&self) -> &Material {
        &self.material
    }

    pub fn solver_config(&self) -> &SolverConfig {
        &self.solver
    }

    pub fn field(&self) -> &DensityField {
        &self.field
    }

    pub fn filter(&self) -> &DensityFilter {
        &self.filter
    }

    pub fn force(&self) -> &[f64] {
        &self.force
    }

    pub fn clamped(&self) -> &[bool] {
        &self.clamped
    }

    /// Completed iterations.
    pub fn iteration(&self) -> u32 {
        self.iter
    }

    pub fn has_warm_start(&self) -> bool {
        self.warm.is_some()
    }

    /// Replaces the boundary conditions. Only the parts flagged as changed are
    /// rebuilt; a new clamped set also drops the PCG warm start.
    pub fn update_bcs(&mut self, bcs: BoundaryConditions, tractions_changed: bool, clamps_changed: bool) {
        self.bcs = bcs;
        if tractions_changed {
            self.force = self.bcs.assemble_force(&self.mesh);
        }
        if clamps_changed {
            self.clamped = clamped_mask(&self.mesh, &self.bcs.clamped_dofs(&self.mesh));
            self.warm = None;
        }
    }

    pub fn set_params(&mut self, params: OptimizerParams) -> Result<(), OptimizeError> {
        params.validate().map_err(OptimizeError::InvalidParams)?;
        if params.rmin != self.params.rmin {
            self.filter = DensityFilter::new(&self.mesh, params.rmin)?;
            self.field.x_phys = physical_densities(&self.filter, &self.field.x, &self.field.passive);
        }
        self.params = params;
        Ok(())
    }

    /// Back to the uniform initial design with no history.
    pub fn reset(&mut self) -> Result<(), OptimizeError> {
        self.field = init_densities(&self.mesh, &self.params)?;
        self.warm = None;
        self.iter = 0;
        Ok(())
    }

    /// Element moduli for a physical density field; passive elements get 0,
    /// which removes them from the operator.
    pub fn moduli(&self, x_phys: &[f64], passive: &[bool]) -> Vec<f64> {
        x_phys
            .iter()
            .zip(passive)
            .map(|(&x, &p)| if p { 0.0 } else { element_young(x, &self.material, self.params.penal) })
            .collect()
    }

    /// Solves and differentiates the compliance of design `x`.
    pub fn evaluate(&self, x: &[f64], passive: &[bool], mode: SolverMode, u0: Option<&[f64]>) -> Result<Evaluation, OptimizeError> {
        let x_phys = physical_densities(&self.filter, x, passive);
        let young = self.moduli(&x_phys, passive);
        let system = System::new(&self.mesh, &self.ke, &young, &self.clamped, &self.force);
        let solution = match mode {
            SolverMode::Direct => fea::solve_direct(&system)?,
            SolverMode::Pcg => match fea::solve_pcg(&system, &self.solver, u0) {
                Ok(s) => s,
                Err(SolveError::NoConvergence { iterations, residual }) => {
                    log::warn!("PCG stalled after {iterations} iterations (residual {residual:e}); using the direct solver");
                    let mut s = fea::solve_direct(&system)?;
                    s.iterations = iterations;
                    s
                }
                Err(e) => return Err(e.into()),
            },
        };
        let compliance = fea::compliance(&solution.u, &self.force);
        let ce = element_strain_energies(&solution.u, &self.mesh, &self.ke);
        let (mut dc_phys, mut dv_phys) = sensitivities(&x_phys, &ce, &self.params, &self.material);
        for e in 0..passive.len() {
            if passive[e] {
                dc_phys[e] = 0.0;
                dv_phys[e] = 0.0;
            }
        }
        let dc = self.filter.filter_sensitivities(&dc_phys)?;
        let dv = self.filter.filter_sensitivities(&dv_phys)?;
        Ok(Evaluation { x_phys, solution, compliance, dc, dv })
    }

    fn oc(&self, dc: &[f64], dv: &[f64], passive: &[bool]) -> Result<OcResult, OptimizeError> {
        OcProblem {
            x: &self.field.x,
            dc,
            dv,
            passive,
            filter: &self.filter,
            volfrac: self.params.volfrac,
            move_limit: self.params.move_limit,
            eta: self.params.eta,
        }
        .solve()
    }

    /// Runs up to `limit` iterations, stopping early on convergence.
    pub fn run(&mut self, limit: u32) -> Result<Vec<IterationReport>, OptimizeError> {
        let mut reports = Vec::new();
        for _ in 0..limit {
            let report = self.run_iteration()?;
            let done = has_converged(&report, &self.params);
            reports.push(report);
            if done {
                break;
            }
        }
        Ok(reports)
    }

    /// One full pass of the loop. The state is left untouched on error.
    pub fn run_iteration(&mut self) -> Result<IterationReport, OptimizeError> {
        let started = Instant::now();
        let mode = if self.params.iterative_solver { SolverMode::Pcg } else { SolverMode::Direct };
        let eval = self.evaluate(&self.field.x, &self.field.passive, mode, self.warm.as_deref())?;
        let volume = mean(&eval.x_phys);

        let mut next = self.field.clone();
        if !eval.solution.zero_load {
            let mut step = self.oc(&eval.dc, &eval.dv, &next.passive)?;
            next.x_phys = physical_densities(&self.filter, &step.x, &next.passive);
            next.x = step.x;
            if self.params.remove_voids && apply_void_removal(&mut next, &self.params) > 0 {
                // re-equilibrate the multiplier with the enlarged passive set
                step = self.oc(&eval.dc, &eval.dv, &next.passive)?;
                next.x_phys = physical_densities(&self.filter, &step.x, &next.passive);
                next.x = step.x;
            }
        }
        let change = next.x.iter().zip(&self.field.x).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));

        self.iter += 1;
        let report = IterationReport {
            iter: self.iter,
            compliance: eval.compliance,
            volume,
            change,
            solver: eval.solution.mode,
            solver_iterations: eval.solution.iterations,
            element_ops: eval.solution.element_ops,
            passive: next.passive_count(),
            wall_time: started.elapsed(),
        };
        self.field = next;
        self.warm = if self.solver.warm_start { Some(eval.solution.u) } else { None };
        Ok(report)
    }
}
