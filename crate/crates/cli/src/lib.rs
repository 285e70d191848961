//! Headless runs: a configuration file plus an optional mutation schedule
//! drive the same session state machine as a live session.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use topsteer_core::config::{load_schedule, validate_schedule, ConfigError, OutputFormat, RunConfig, ScheduleEntry};
use topsteer_core::export::{export_vtk, history_row, HISTORY_HEADER};
use topsteer_core::optimizer::IterationReport;
use topsteer_core::session::{Phase, SessionCore};

pub const HISTORY_FILE: &str = "history.csv";
pub const VTK_FILE: &str = "density.vtk";
pub const FRAME_FILE: &str = "density.frame";

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Config(String),
    #[error("solver failure at iteration {iteration}: {message}")]
    Solver { iteration: u32, message: String },
    #[error("cannot write outputs: {0}")]
    Io(#[from] io::Error),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e.to_string())
    }
}

impl RunError {
    /// 1 for configuration problems, 2 for solver failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Io(_) => 1,
            RunError::Solver { .. } => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub phase: Phase,
    pub iterations: u32,
    pub history: Vec<IterationReport>,
    pub out_dir: PathBuf,
}

/// Loads both files, then runs. Nothing is written unless both validate.
pub fn run_files(
    config: &Path,
    schedule: Option<&Path>,
    out: Option<&Path>,
    on_iteration: impl FnMut(&SessionCore),
) -> Result<RunSummary, RunError> {
    let cfg = RunConfig::load(config)?;
    let schedule = match schedule {
        Some(p) => load_schedule(p)?,
        None => Vec::new(),
    };
    run(&cfg, &schedule, out, on_iteration)
}

/// Runs to completion, applying each schedule entry at its sync point.
/// `on_iteration` sees the session after every completed iteration.
pub fn run(
    cfg: &RunConfig,
    schedule: &[ScheduleEntry],
    out: Option<&Path>,
    mut on_iteration: impl FnMut(&SessionCore),
) -> Result<RunSummary, RunError> {
    validate_schedule(schedule)?;
    let mut core = SessionCore::new(cfg.problem())?;
    core.start().map_err(|e| RunError::Config(e.to_string()))?;

    let out_dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.outputs.dir.clone());
    fs::create_dir_all(&out_dir)?;
    let formats = &cfg.outputs.formats;
    let mut history = match formats.contains(&OutputFormat::Csv) {
        true => {
            let mut w = BufWriter::new(File::create(out_dir.join(HISTORY_FILE))?);
            writeln!(w, "{HISTORY_HEADER}")?;
            w.flush()?;
            Some(w)
        }
        false => None,
    };

    let mut pending = schedule.iter().peekable();
    let mut failure = None;
    while core.phase() == Phase::Running {
        let k = core.iteration() + 1;
        let mut cmds = Vec::new();
        while let Some(e) = pending.next_if(|e| e.applied_at_iteration <= k) {
            if e.applied_at_iteration == k {
                cmds.push(e.command.clone());
            }
        }
        match core.step(&cmds) {
            Ok(Some(report)) => {
                log::info!(
                    "it {:>4}  c {:.6e}  vol {:.4}  change {:.4}  {:?} {} its",
                    report.iter,
                    report.compliance,
                    report.volume,
                    report.change,
                    report.solver,
                    report.solver_iterations
                );
                if let Some(w) = history.as_mut() {
                    writeln!(w, "{}", history_row(&report))?;
                    w.flush()?;
                }
                on_iteration(&core);
            }
            Ok(None) => {}
            Err(e) => {
                failure = Some(RunError::Solver { iteration: k, message: e.to_string() });
            }
        }
    }
    if pending.next().is_some() {
        log::warn!("run ended before every schedule entry applied");
    }

    write_final(&core, cfg, &out_dir)?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(RunSummary { phase: core.phase(), iterations: core.iteration(), history: core.history().to_vec(), out_dir })
}

fn write_final(core: &SessionCore, cfg: &RunConfig, dir: &Path) -> io::Result<()> {
    let snap = core.snapshot();
    let formats = &cfg.outputs.formats;
    if formats.contains(&OutputFormat::Vtk) {
        export_vtk(&dir.join(VTK_FILE), &snap.x_phys, &snap.mesh, &snap.domain)?;
    }
    if formats.contains(&OutputFormat::Frame) {
        fs::write(dir.join(FRAME_FILE), snap.frame.encode())?;
    }
    Ok(())
}
