use std::sync::Arc;

use crate::bc::BoundaryConditions;
use crate::config::{ConfigError, Problem};
use crate::fea::supports_rigid_body;
use crate::frame::DensityFrame;
use crate::mesh::{DomainSpec, MeshTopology};
use crate::optimizer::{has_converged, IterationReport, OptimizeError, Optimizer, OptimizerParams};

use super::{MutationCommand, Phase, SessionError, Snapshot};

/// Single-threaded session state machine. The live session and headless
/// replay both drive this type, so they share every state transition.
#[derive(Debug, Clone)]
pub struct SessionCore {
    problem: Problem,
    opt: Optimizer,
    phase: Phase,
    history: Vec<IterationReport>,
    error: Option<String>,
}

impl SessionCore {
    pub fn new(problem: Problem) -> Result<Self, ConfigError> {
        let opt = problem.build_optimizer()?;
        Ok(Self { problem, opt, phase: Phase::Configuring, history: Vec::new(), error: None })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Completed iterations.
    pub fn iteration(&self) -> u32 {
        self.opt.iteration()
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.opt
    }

    pub fn history(&self) -> &[IterationReport] {
        &self.history
    }

    pub fn error(&self) -> Option<&str> {
        self.error.as_deref()
    }

    /// The problem with the current boundary conditions and parameters.
    pub fn problem(&self) -> Problem {
        Problem { bcs: self.opt.bcs().clone(), params: self.opt.params().clone(), ..self.problem.clone() }
    }

    fn require_configuring(&self, what: &str) -> Result<(), SessionError> {
        if self.phase == Phase::Configuring {
            Ok(())
        } else {
            Err(SessionError::BadPhase(format!("{what} requires phase configuring, session is {}", self.phase)))
        }
    }

    /// Rebuilds the mesh. Boundary conditions and parameters carry over.
    pub fn set_domain(&mut self, domain: DomainSpec, elem_size: f64) -> Result<(), SessionError> {
        self.require_configuring("set_domain")?;
        let problem = Problem { domain, elem_size, ..self.problem() };
        let opt = problem.build_optimizer().map_err(|e| SessionError::BadValue(e.to_string()))?;
        self.problem = problem;
        self.opt = opt;
        Ok(())
    }

    /// Replaces every optimizer parameter at once and starts from a fresh design.
    pub fn set_params(&mut self, params: OptimizerParams) -> Result<(), SessionError> {
        self.require_configuring("set_params")?;
        params.validate().map_err(SessionError::BadValue)?;
        let mut opt = self.opt.clone();
        opt.set_params(params).and_then(|_| opt.reset()).map_err(|e| SessionError::BadValue(e.to_string()))?;
        self.opt = opt;
        Ok(())
    }

    /// Applies commands outside a run (Configuring, or Reset from a final phase).
    pub fn apply_now(&mut self, cmds: &[MutationCommand]) -> Result<(), SessionError> {
        for cmd in cmds {
            cmd.validate().map_err(SessionError::BadValue)?;
            let allowed = match self.phase {
                Phase::Configuring => !matches!(cmd, MutationCommand::Stop),
                Phase::Finished | Phase::Stopped => matches!(cmd, MutationCommand::Reset),
                Phase::Running => false,
            };
            if !allowed {
                return Err(SessionError::BadPhase(format!("{} not accepted while {}", command_name(cmd), self.phase)));
            }
        }
        self.drain(cmds);
        if self.phase == Phase::Configuring {
            // the pre-run design always tracks the current volume target
            self.reset();
        }
        Ok(())
    }

    /// Configuring → Running after the solvability pre-checks.
    pub fn start(&mut self) -> Result<(), SessionError> {
        self.require_configuring("start")?;
        if !supports_rigid_body(self.opt.mesh(), self.opt.clamped()) {
            return Err(SessionError::SingularSystem);
        }
        if self.opt.bcs().tractions().next().is_none() {
            return Err(SessionError::ZeroLoad);
        }
        self.phase = Phase::Running;
        self.error = None;
        Ok(())
    }

    /// Applies the commands drained at a sync point and settles the phase.
    pub fn sync_point(&mut self, cmds: &[MutationCommand]) {
        self.drain(cmds);
        if self.phase == Phase::Running && self.opt.iteration() >= self.opt.params().maxiter {
            self.phase = Phase::Finished;
        }
    }

    fn drain(&mut self, cmds: &[MutationCommand]) {
        let mut bcs = self.opt.bcs().clone();
        let mut params = self.opt.params().clone();
        for cmd in cmds {
            match cmd {
                MutationCommand::TapEntity { entity } => {
                    bcs.tap(*entity);
                }
                MutationCommand::DragEntity { entity, force } => {
                    if let Err(e) = bcs.drag(*entity, *force) {
                        log::warn!("ignoring drag on {entity}: {e}");
                    }
                }
                MutationCommand::ApplyPreset { preset } => bcs = preset.bcs(),
                MutationCommand::SetVolfrac { value } => params.volfrac = *value,
                MutationCommand::SetMaxIter { value } => params.maxiter = *value,
                MutationCommand::SetRemoveVoids { value } => params.remove_voids = *value,
                MutationCommand::SetIterativeSolver { value } => params.iterative_solver = *value,
                MutationCommand::Stop => {
                    if self.phase == Phase::Running {
                        self.phase = Phase::Stopped;
                    }
                }
                MutationCommand::Reset => {
                    self.commit(bcs.clone(), params.clone());
                    self.reset();
                }
            }
        }
        self.commit(bcs, params);
    }

    fn commit(&mut self, bcs: BoundaryConditions, params: OptimizerParams) {
        let old = self.opt.bcs();
        let tractions_changed = !old.tractions().eq(bcs.tractions());
        let clamps_changed = !old.clamped().eq(bcs.clamped());
        if tractions_changed || clamps_changed {
            self.opt.update_bcs(bcs, tractions_changed, clamps_changed);
        }
        if &params != self.opt.params() {
            if let Err(e) = self.opt.set_params(params) {
                log::warn!("ignoring parameter change: {e}");
            }
        }
    }

    fn reset(&mut self) {
        if let Err(e) = self.opt.reset() {
            log::error!("reset failed: {e}");
        }
        self.history.clear();
        self.error = None;
        self.phase = Phase::Configuring;
    }

    /// Runs one iteration. A failure stops the session and records the error.
    pub fn iterate(&mut self) -> Result<IterationReport, OptimizeError> {
        debug_assert_eq!(self.phase, Phase::Running);
        match self.opt.run_iteration() {
            Ok(report) => {
                if has_converged(&report, self.opt.params()) {
                    self.phase = Phase::Finished;
                }
                self.history.push(report.clone());
                Ok(report)
            }
            Err(e) => {
                self.phase = Phase::Stopped;
                self.error = Some(e.to_string());
                Err(e)
            }
        }
    }

    /// Sync point followed by an iteration if the run is still going.
    pub fn step(&mut self, cmds: &[MutationCommand]) -> Result<Option<IterationReport>, OptimizeError> {
        self.sync_point(cmds);
        if self.phase != Phase::Running {
            return Ok(None);
        }
        self.iterate().map(Some)
    }

    pub fn snapshot(&self) -> Snapshot {
        let field = self.opt.field();
        let mesh: MeshTopology = *self.opt.mesh();
        Snapshot {
            seq: 0,
            iter: self.opt.iteration(),
            phase: self.phase,
            history: self.history.iter().map(|r| (r.iter, r.compliance)).collect(),
            last: self.history.last().cloned(),
            volume: field.volume(),
            params: self.opt.params().clone(),
            bcs: self.opt.bcs().clone(),
            mesh,
            domain: self.problem.domain.clone(),
            elem_size: self.problem.elem_size,
            frame: DensityFrame::from_field(self.opt.iteration(), &mesh, &field.x_phys, &field.passive),
            x_phys: Arc::from(field.x_phys.as_slice()),
            error: self.error.clone(),
        }
    }
}

pub(crate) fn command_name(cmd: &MutationCommand) -> &'static str {
    match cmd {
        MutationCommand::TapEntity { .. } => "tap_entity",
        MutationCommand::DragEntity { .. } => "drag_entity",
        MutationCommand::ApplyPreset { .. } => "apply_preset",
        MutationCommand::SetVolfrac { .. } => "set_volfrac",
        MutationCommand::SetMaxIter { .. } => "set_max_iter",
        MutationCommand::SetRemoveVoids { .. } => "set_remove_voids",
        MutationCommand::SetIterativeSolver { .. } => "set_iterative_solver",
        MutationCommand::Stop => "stop",
        MutationCommand::Reset => "reset",
    }
}
