use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Parser, Subcommand};

use topsteer_core::config::RunConfig;
use topsteer_server::ServerConfig;

#[derive(Parser)]
#[command(name = "topsteer", version, about = "Interactive SIMP topology optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a configured problem to completion and export the results.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Mutation schedule (or a recorded live session) to replay.
        #[arg(long)]
        schedule: Option<PathBuf>,
        /// Output directory; overrides `outputs.dir` of the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Reserved; the pipeline has no stochastic component.
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for the numerical kernels; 1 is bitwise reproducible.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Serve the WebSocket session endpoint at /session.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Problem new sessions start from (outputs are ignored).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seconds a session outlives its connection.
        #[arg(long, default_value_t = 60)]
        grace: u64,
        #[arg(long)]
        threads: Option<usize>,
    },
}

fn configure_threads(threads: Option<usize>) -> anyhow::Result<()> {
    let Some(n) = threads else { return Ok(()) };
    anyhow::ensure!(n >= 1, "--threads must be >= 1");
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    #[cfg(not(feature = "parallel"))]
    log::info!("built without the parallel feature; running sequentially (ignoring --threads {n})");
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run { config, schedule, out, seed, threads } => {
            if let Err(e) = configure_threads(threads) {
                log::error!("{e:#}");
                return ExitCode::from(1);
            }
            if let Some(seed) = seed {
                log::debug!("seed {seed} accepted (unused)");
            }
            match topsteer_cli::run_files(&config, schedule.as_deref(), out.as_deref(), |_| {}) {
                Ok(summary) => {
                    log::info!("{} after {} iterations; outputs in {}", summary.phase, summary.iterations, summary.out_dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    log::error!("{e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
        Command::Serve { addr, config, grace, threads } => match serve(addr, config, grace, threads) {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                log::error!("{e:#}");
                ExitCode::from(1)
            }
        },
    }
}

fn serve(addr: SocketAddr, config: Option<PathBuf>, grace: u64, threads: Option<usize>) -> anyhow::Result<()> {
    configure_threads(threads)?;
    let mut server = ServerConfig { grace: Duration::from_secs(grace), ..ServerConfig::default() };
    if let Some(path) = config {
        let cfg = RunConfig::load(&path)?;
        let problem = cfg.problem();
        problem.validate()?;
        server.initial = problem;
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        log::info!("listening on ws://{}/session", listener.local_addr()?);
        topsteer_server::serve(listener, server).await?;
        Ok(())
    })
}
