//! End-to-end acceptance criteria. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails. Runs single-threaded.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use futures::{SinkExt, StreamExt};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tokio_tungstenite::tungstenite::Message;

use topsteer_core::bc::BoundaryConditions;
use topsteer_core::config::{OutputSpec, Problem, RunConfig};
use topsteer_core::export::{history_csv, write_vtk};
use topsteer_core::fea::{solve_direct, solve_pcg, Material, SolverConfig, SolverMode, System};
use topsteer_core::filter::DensityFilter;
use topsteer_core::frame::DensityFrame;
use topsteer_core::mesh::{BoundaryEntity, MeshTopology};
use topsteer_core::optimizer::{IterationReport, Optimizer, OptimizerParams};
use topsteer_core::session::{MutationCommand, Observer, Phase, Preset, Session, SessionCore, Snapshot};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)*) => {
        if !$cond {
            return Err(format!($($fmt)*));
        }
    };
}

fn rel_inf(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs())) / scale
}

fn optimizer(mesh: MeshTopology, bcs: BoundaryConditions, params: OptimizerParams, solver: SolverConfig) -> Optimizer {
    Optimizer::new(mesh, bcs, params, Material::default(), solver).unwrap()
}

fn within(limit: Duration, started: Instant) -> Result<Duration, String> {
    let t = started.elapsed();
    if t < limit {
        Ok(t)
    } else {
        Err(format!("took {t:.2?}, limit {limit:?}"))
    }
}

fn gradient_check() -> Outcome {
    let started = Instant::now();
    let params = OptimizerParams { volfrac: 0.5, penal: 3.0, rmin: 1.5, ..Default::default() };
    let opt = optimizer(MeshTopology::grid(4, 2, 2), Preset::Cantilever.bcs(), params, SolverConfig::default());
    let n = opt.mesh().element_count();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let x: Vec<f64> = (0..n).map(|_| 0.5 + rng.random_range(-0.2..0.2)).collect();
    let passive = vec![false; n];
    let compliance = |x: &[f64]| opt.evaluate(x, &passive, SolverMode::Direct, None).unwrap().compliance;
    let analytic = opt.evaluate(&x, &passive, SolverMode::Direct, None).unwrap().dc;
    let h = 1e-6;
    let mut worst = 0.0_f64;
    for e in sample(&mut rng, n, 10) {
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[e] += h;
        xm[e] -= h;
        let fd = (compliance(&xp) - compliance(&xm)) / (2.0 * h);
        worst = worst.max((fd - analytic[e]).abs() / analytic[e].abs());
    }
    let t = within(Duration::from_secs(10), started)?;
    ensure!(worst <= 1e-3, "max relative error {worst:.3e} > 1e-3");
    Ok(format!("max relative error {worst:.2e} over 10 elements in {t:.2?}"))
}

fn solver_oracle() -> Outcome {
    let started = Instant::now();
    let opt = optimizer(MeshTopology::grid(8, 4, 4), Preset::Cantilever.bcs(), OptimizerParams::default(), SolverConfig::default());
    let field = opt.field();
    let young = opt.moduli(&field.x_phys, &field.passive);
    let ke = topsteer_core::fea::hex8_stiffness(1.0, 0.3).unwrap();
    let system = System::new(opt.mesh(), &ke, &young, opt.clamped(), opt.force());
    let direct = solve_direct(&system).map_err(|e| e.to_string())?;
    let config = SolverConfig { pcg_tol: 1e-8, ..Default::default() };
    let pcg = solve_pcg(&system, &config, None).map_err(|e| e.to_string())?;
    let err = rel_inf(&pcg.u, &direct.u);
    let t = within(Duration::from_secs(5), started)?;
    ensure!(err <= 1e-6, "relative inf-norm difference {err:.3e} > 1e-6");
    Ok(format!("relative inf-norm difference {err:.2e}, {} PCG iterations, {t:.2?}", pcg.iterations))
}

/// Normalized cone weights of element `e` against every element, from the raw formula.
fn dense_filter_row(dims: [usize; 3], rmin: f64, e: usize) -> Vec<f64> {
    let [nx, ny, _] = dims;
    let n: usize = dims.iter().product();
    let coord = |i: usize| [(i % nx) as f64, ((i / nx) % ny) as f64, (i / (nx * ny)) as f64];
    let ce = coord(e);
    let mut row: Vec<f64> = (0..n)
        .map(|j| {
            let cj = coord(j);
            let d = ((ce[0] - cj[0]).powi(2) + (ce[1] - cj[1]).powi(2) + (ce[2] - cj[2]).powi(2)).sqrt();
            (rmin - d).max(0.0)
        })
        .collect();
    let hs: f64 = row.iter().sum();
    row.iter_mut().for_each(|w| *w /= hs);
    row
}

fn filter_oracles() -> Outcome {
    let dims = [8, 8, 8];
    let mesh = MeshTopology::grid(8, 8, 8);
    let n = mesh.element_count();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut conv, mut fixed, mut adj) = (0.0_f64, 0.0_f64, 0.0_f64);
    for rmin in [1.0, 1.5, 2.4, 3.0] {
        let filter = DensityFilter::new(&mesh, rmin).map_err(|e| e.to_string())?;
        let dense: Vec<Vec<f64>> = (0..n).map(|e| dense_filter_row(dims, rmin, e)).collect();
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let fx = filter.filter_field(&x).unwrap();
        let hx: Vec<f64> = dense.iter().map(|row| row.iter().zip(&x).map(|(w, v)| w * v).sum()).collect();
        conv = conv.max(rel_inf(&fx, &hx));
        let c = filter.filter_field(&vec![0.37; n]).unwrap();
        fixed = fixed.max(c.iter().fold(0.0_f64, |m, v| m.max((v - 0.37).abs())));
        // <H x, y> from the dense oracle against <x, adjoint(y)> from the implementation
        let lhs: f64 = hx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let aty = filter.filter_sensitivities(&y).unwrap();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        adj = adj.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
        let hty: Vec<f64> = (0..n).map(|j| (0..n).map(|e| dense[e][j] * y[e]).sum()).collect();
        adj = adj.max(rel_inf(&aty, &hty));
    }
    ensure!(conv <= 1e-12, "convolution error {conv:.3e} > 1e-12");
    ensure!(fixed <= 1e-12, "constant field drift {fixed:.3e} > 1e-12");
    ensure!(adj <= 1e-12, "adjoint mismatch {adj:.3e} > 1e-12");
    Ok(format!("convolution {conv:.1e}, fixed point {fixed:.1e}, adjoint {adj:.1e}"))
}

struct CantileverRun {
    reports: Vec<IterationReport>,
    volumes: Vec<f64>,
    opt: Optimizer,
    elapsed: Duration,
}

fn cantilever_16x8x8() -> CantileverRun {
    let started = Instant::now();
    let params = OptimizerParams { volfrac: 0.3, maxiter: 60, change_tol: 0.0, ..Default::default() };
    let mut opt = optimizer(MeshTopology::grid(16, 8, 8), Preset::Cantilever.bcs(), params, SolverConfig::default());
    let mut reports = Vec::new();
    let mut volumes = Vec::new();
    for _ in 0..60 {
        reports.push(opt.run_iteration().unwrap());
        volumes.push(opt.field().volume());
    }
    CantileverRun { reports, volumes, opt, elapsed: started.elapsed() }
}

fn oc_feasibility(run: &CantileverRun) -> Outcome {
    ensure!(run.reports.len() == 60, "only {} iterations", run.reports.len());
    let move_limit = run.opt.params().move_limit;
    let vol_err = run.volumes.iter().chain(run.reports.iter().map(|r| &r.volume)).fold(0.0_f64, |m, v| m.max((v - 0.3).abs()));
    let max_change = run.reports.iter().fold(0.0_f64, |m, r| m.max(r.change));
    ensure!(vol_err <= 1e-4, "max |volume - 0.3| = {vol_err:.3e} > 1e-4");
    ensure!(max_change <= move_limit, "max change {max_change} > move {move_limit}");
    ensure!(run.elapsed < Duration::from_secs(60), "took {:.2?}, limit 60 s", run.elapsed);
    Ok(format!("max |vol - 0.3| {vol_err:.1e}, max change {max_change:.3} <= {move_limit}, 60 iterations in {:.2?}", run.elapsed))
}

/// Nodes reachable from `start` through elements with x_phys >= 0.5.
fn solid_reach(mesh: &MeshTopology, x_phys: &[f64], start: &[usize]) -> BTreeSet<usize> {
    let mut seen: BTreeSet<usize> = start.iter().copied().collect();
    let mut stack: Vec<usize> = start.to_vec();
    while let Some(node) = stack.pop() {
        for (e, _) in mesh.node_elements(node) {
            if x_phys[e] < 0.5 {
                continue;
            }
            for n in mesh.element_nodes(e).unwrap() {
                if seen.insert(n) {
                    stack.push(n);
                }
            }
        }
    }
    seen
}

fn optimization_sanity(run: &CantileverRun) -> Outcome {
    let initial = run.reports[0].compliance;
    let field = run.opt.field();
    let final_c = run.opt.evaluate(&field.x, &field.passive, SolverMode::Direct, None).map_err(|e| e.to_string())?.compliance;
    ensure!(final_c < initial, "final compliance {final_c} not below initial {initial}");
    let mesh = run.opt.mesh();
    let clamped: BTreeSet<usize> = run.opt.bcs().clamped_nodes(mesh).into_iter().collect();
    let loaded = run.opt.bcs().loaded_nodes(mesh);
    ensure!(!loaded.is_empty(), "no loaded nodes");
    for node in &loaded {
        let reach = solid_reach(mesh, &field.x_phys, &[*node]);
        ensure!(reach.iter().any(|n| clamped.contains(n)), "loaded node {node} has no solid path to the support");
    }
    Ok(format!("compliance {initial:.4} -> {final_c:.4}; all {} loaded nodes connect to the support", loaded.len()))
}

fn mirror_x(mesh: &MeshTopology, e: usize) -> usize {
    let [ex, ey, ez] = mesh.element_coords(e);
    mesh.element_index(mesh.nx - 1 - ex, ey, ez)
}

fn bridge_symmetry() -> Outcome {
    let started = Instant::now();
    let solver = SolverConfig { mode: SolverMode::Direct, ..Default::default() };
    let params = OptimizerParams { iterative_solver: false, ..Default::default() };
    let mut opt = optimizer(MeshTopology::grid(16, 8, 8), Preset::Bridge.bcs(), params, solver);
    let mesh = *opt.mesh();
    let mut worst = 0.0_f64;
    let mut iters = 0;
    loop {
        let report = opt.run_iteration().map_err(|e| e.to_string())?;
        ensure!(report.solver == SolverMode::Direct, "iteration {} used {:?}", report.iter, report.solver);
        let x = &opt.field().x_phys;
        let asym = (0..x.len()).fold(0.0_f64, |m, e| m.max((x[e] - x[mirror_x(&mesh, e)]).abs()));
        worst = worst.max(asym);
        ensure!(asym <= 1e-8, "iteration {}: asymmetry {asym:.3e} > 1e-8", report.iter);
        iters += 1;
        if topsteer_core::optimizer::has_converged(&report, opt.params()) {
            break;
        }
    }
    Ok(format!("max asymmetry {worst:.1e} over {iters} iterations in {:.2?}", started.elapsed()))
}

fn entity(id: &str) -> BoundaryEntity {
    id.parse().unwrap()
}

fn replay_determinism(scratch: &Path) -> Outcome {
    const WAIT: Duration = Duration::from_secs(120);
    let mut problem = Problem::grid(12, 6, 6);
    problem.bcs = Preset::Cantilever.bcs();
    problem.params.maxiter = 16;
    problem.params.change_tol = 0.0;

    let seen: Arc<Mutex<Vec<Arc<Snapshot>>>> = Arc::default();
    let sink = seen.clone();
    let observer: Observer = Arc::new(move |s: &Arc<Snapshot>| sink.lock().unwrap().push(s.clone()));
    let session = Session::with_observer(problem, observer).map_err(|e| e.to_string())?;
    for k in [1, 5, 10] {
        session.pause_before(k);
    }
    session.start().map_err(|e| e.to_string())?;
    let commands = [
        (1, MutationCommand::ApplyPreset { preset: Preset::Bridge }),
        (5, MutationCommand::SetVolfrac { value: 0.35 }),
        (10, MutationCommand::DragEntity { entity: entity("face:z+"), force: [0.0, 0.25, -1.5] }),
    ];
    for (k, cmd) in commands {
        ensure!(session.wait_held(WAIT) == Some(k), "worker did not hold at {k}");
        let ack = session.submit(cmd).map_err(|e| e.to_string())?;
        ensure!(ack.applies_at == k, "ack applies_at {} != {k}", ack.applies_at);
        session.resume();
    }
    ensure!(session.wait_idle(WAIT) == Some(Phase::Finished), "live run did not finish");

    let snaps = seen.lock().unwrap().clone();
    let mut live_iterates: Vec<Vec<f64>> = Vec::new();
    let mut live_reports = Vec::new();
    for s in &snaps {
        if s.iter as usize <= live_iterates.len() {
            continue;
        }
        live_iterates.push(s.x_phys.to_vec());
        live_reports.push(s.last.clone().unwrap());
    }
    let recording = session.recording();
    ensure!(recording.len() == 3, "recorded {} commands", recording.len());

    let config_path = scratch.join("replay_config.json");
    let schedule_path = scratch.join("replay_schedule.json");
    let cfg = RunConfig::from_problem(&session.initial_problem(), OutputSpec::default());
    std::fs::write(&config_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    std::fs::write(&schedule_path, serde_json::to_string_pretty(&recording).unwrap()).unwrap();

    // headless replay through the library entry point
    let mut replayed: Vec<Vec<f64>> = Vec::new();
    topsteer_cli::run_files(&config_path, Some(&schedule_path), Some(&scratch.join("lib_out")), |core| {
        replayed.push(core.optimizer().field().x_phys.clone())
    })
    .map_err(|e| e.to_string())?;
    ensure!(replayed.len() == live_iterates.len(), "{} replayed vs {} live iterates", replayed.len(), live_iterates.len());
    for (k, (a, b)) in live_iterates.iter().zip(&replayed).enumerate() {
        ensure!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()), "iterate {} differs", k + 1);
    }

    // and through the binary
    let out = scratch.join("bin_out");
    let status = std::process::Command::new(env!("CARGO_BIN_EXE_topsteer"))
        .args(["run", "--threads", "1", "--config"])
        .arg(&config_path)
        .arg("--schedule")
        .arg(&schedule_path)
        .arg("--out")
        .arg(&out)
        .env("RUST_LOG", "warn")
        .status()
        .map_err(|e| e.to_string())?;
    ensure!(status.success(), "topsteer run exited with {status}");
    let csv = std::fs::read_to_string(out.join("history.csv")).map_err(|e| e.to_string())?;
    ensure!(csv == history_csv(&live_reports), "history.csv differs from the live history");
    let last = snaps.last().unwrap();
    let frame = std::fs::read(out.join("density.frame")).map_err(|e| e.to_string())?;
    ensure!(frame == last.frame.encode(), "final frame differs");
    let mut vtk = Vec::new();
    write_vtk(&mut vtk, &last.x_phys, &last.mesh, &last.domain).unwrap();
    ensure!(std::fs::read(out.join("density.vtk")).unwrap() == vtk, "final VTK differs");
    Ok(format!("{} iterates and history.csv bitwise identical (commands at 1, 5, 10)", live_iterates.len()))
}

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../server/tests/fixtures")
}

fn protocol_golden() -> Outcome {
    let expected: Vec<Vec<u8>> = (1..=5)
        .map(|k| std::fs::read(fixtures().join(format!("cantilever_4x2x2_iter{k}.bin"))))
        .collect::<Result<_, _>>()
        .map_err(|e| format!("missing fixture: {e}"))?;

    let mut problem = Problem::grid(4, 2, 2);
    problem.bcs = Preset::Cantilever.bcs();
    problem.params.maxiter = 5;
    let mut core = SessionCore::new(problem).map_err(|e| e.to_string())?;
    core.start().map_err(|e| e.to_string())?;
    let mut headless = Vec::new();
    while core.step(&[]).map_err(|e| e.to_string())?.is_some() {
        headless.push(core.snapshot().frame.encode());
    }
    ensure!(headless == expected, "headless frames differ from the fixtures");

    let streamed = stream_canonical_session()?;
    ensure!(!streamed.is_empty(), "no frames streamed");
    for bytes in &streamed {
        let iter = DensityFrame::decode(bytes).map_err(|e| e.to_string())?.iter as usize;
        ensure!((1..=5).contains(&iter) && bytes == &expected[iter - 1], "streamed frame {iter} differs");
    }
    let last = DensityFrame::decode(streamed.last().unwrap()).unwrap().iter;
    ensure!(last == 5, "last streamed frame is iteration {last}");
    Ok(format!("5 headless and {} streamed frames byte-exact", streamed.len()))
}

/// Plays the canonical session over the WebSocket endpoint and returns the frames.
fn stream_canonical_session() -> Result<Vec<Vec<u8>>, String> {
    let text = std::fs::read_to_string(fixtures().join("canonical_session.json")).map_err(|e| e.to_string())?;
    let msgs: Vec<serde_json::Value> = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| e.to_string())?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.map_err(|e| e.to_string())?;
        let addr = listener.local_addr().unwrap();
        let config = topsteer_server::ServerConfig { grace: Duration::from_millis(50), ..Default::default() };
        tokio::spawn(topsteer_server::serve(listener, config));
        let (mut ws, _) = tokio_tungstenite::connect_async(format!("ws://{addr}/session")).await.map_err(|e| e.to_string())?;
        let mut frames = Vec::new();
        let mut acks = 0;
        let mut finished = false;
        for m in &msgs {
            ws.send(Message::Text(m.to_string().into())).await.map_err(|e| e.to_string())?;
        }
        let deadline = tokio::time::Instant::now() + Duration::from_secs(60);
        loop {
            let next = tokio::time::timeout_at(deadline, ws.next()).await.map_err(|_| "timed out".to_string())?;
            match next.ok_or("connection closed")?.map_err(|e| e.to_string())? {
                Message::Text(t) => {
                    let v: serde_json::Value = serde_json::from_str(t.as_str()).map_err(|e| e.to_string())?;
                    match v["type"].as_str() {
                        Some("ack") if !finished => acks += 1,
                        Some("ack") => {}
                        Some("status") if v["phase"] == "finished" && !finished => {
                            // a trailing frame, if any, arrives before the ack of this request
                            finished = true;
                            ws.send(Message::Text(r#"{"type":"get_snapshot"}"#.into())).await.map_err(|e| e.to_string())?;
                        }
                        Some("status") => {}
                        Some("snapshot") if finished => break,
                        _ => return Err(format!("unexpected reply {v}")),
                    }
                }
                Message::Binary(b) => frames.push(b.to_vec()),
                _ => {}
            }
        }
        if acks != msgs.len() {
            return Err(format!("{acks} acks for {} messages", msgs.len()));
        }
        Ok(frames)
    })
}

fn void_removal_consistency() -> Outcome {
    let started = Instant::now();
    let run = |remove_voids: bool| {
        let params = OptimizerParams { remove_voids, ..Default::default() };
        let mut opt = optimizer(MeshTopology::grid(16, 8, 8), Preset::Cantilever.bcs(), params, SolverConfig::default());
        let reports = opt.run(opt.params().maxiter).unwrap();
        let field = opt.field();
        let c = opt.evaluate(&field.x, &field.passive, SolverMode::Direct, None).unwrap().compliance;
        let ops: u64 = reports.iter().map(|r| r.element_ops).sum();
        (c, ops, reports.len(), field.passive_count())
    };
    let (c_on, ops_on, it_on, passive) = run(true);
    let (c_off, ops_off, it_off, _) = run(false);
    let rel = (c_on - c_off).abs() / c_off;
    ensure!(rel <= 0.01, "compliance on {c_on:.5} vs off {c_off:.5}: {:.3} % > 1 %", 100.0 * rel);
    ensure!(ops_on < ops_off, "voids on used {ops_on} element ops, off {ops_off}");
    Ok(format!(
        "compliance {c_on:.5} vs {c_off:.5} ({:.3} %), element ops {ops_on} < {ops_off} ({it_on} vs {it_off} iterations, {passive} voids), {:.2?}",
        100.0 * rel,
        started.elapsed()
    ))
}

fn report(name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let started = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
    });
    match outcome {
        Ok(msg) => {
            println!("PASS {name}: {msg} [{:.2?}]", started.elapsed());
            true
        }
        Err(msg) => {
            println!("FAIL {name}: {msg} [{:.2?}]", started.elapsed());
            false
        }
    }
}

fn main() {
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new().num_threads(1).build_global().expect("single-threaded pool");
    let scratch = tempfile::tempdir().expect("scratch directory");

    let mut ok = true;
    ok &= report("gradient_check", gradient_check);
    ok &= report("solver_oracle", solver_oracle);
    ok &= report("filter_oracles", filter_oracles);
    let run = catch_unwind(cantilever_16x8x8).ok();
    ok &= report("oc_feasibility", || run.as_ref().ok_or("cantilever run panicked".to_string()).and_then(oc_feasibility));
    ok &= report("optimization_sanity", || run.as_ref().ok_or("cantilever run panicked".to_string()).and_then(optimization_sanity));
    ok &= report("bridge_symmetry", bridge_symmetry);
    ok &= report("replay_determinism", || replay_determinism(scratch.path()));
    ok &= report("protocol_golden", protocol_golden);
    ok &= report("void_removal_consistency", void_removal_consistency);

    if !ok {
        std::process::exit(1);
    }
}
