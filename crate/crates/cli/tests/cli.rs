use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use topsteer_cli::{FRAME_FILE, HISTORY_FILE, VTK_FILE};
use topsteer_core::config::{OutputSpec, Problem, RunConfig};
use topsteer_core::frame::DensityFrame;
use topsteer_core::session::Preset;

fn write_config(dir: &Path, maxiter: u32) -> PathBuf {
    let mut problem = Problem::grid(6, 3, 3);
    problem.bcs = Preset::Cantilever.bcs();
    problem.params.maxiter = maxiter;
    let cfg = RunConfig::from_problem(&problem, OutputSpec::default());
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    path
}

fn topsteer(args: &[&std::ffi::OsStr]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_topsteer")).args(args).output().unwrap()
}

fn run(config: &Path, schedule: Option<&Path>, out: &Path) -> Output {
    let mut args = vec!["run".as_ref(), "--config".as_ref(), config.as_os_str(), "--out".as_ref(), out.as_os_str()];
    if let Some(s) = schedule {
        args.push("--schedule".as_ref());
        args.push(s.as_os_str());
    }
    args.push("--threads".as_ref());
    args.push("1".as_ref());
    topsteer(&args)
}

#[test]
fn writes_one_history_row_per_iteration() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 5);
    let out = dir.path().join("out");
    let o = run(&cfg, None, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let csv = fs::read_to_string(out.join(HISTORY_FILE)).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert_eq!(rows[0], "iter,compliance,volume,change");
    assert_eq!(rows.len(), 6);
    for (i, row) in rows[1..].iter().enumerate() {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols.len(), 4);
        assert_eq!(cols[0].parse::<u32>().unwrap(), i as u32 + 1);
        let volume: f64 = cols[2].parse().unwrap();
        assert!((volume - 0.3).abs() < 1e-4, "{volume}");
    }

    let frame = DensityFrame::decode(&fs::read(out.join(FRAME_FILE)).unwrap()).unwrap();
    assert_eq!((frame.iter, frame.nx, frame.ny, frame.nz), (5, 6, 3, 3));
    let vtk = fs::read_to_string(out.join(VTK_FILE)).unwrap();
    assert!(vtk.contains("CELL_DATA 54"));
}

#[test]
fn empty_schedule_equals_no_schedule() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 4);
    let sched = dir.path().join("empty.json");
    fs::write(&sched, "[]").unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&cfg, None, &a).status.success());
    assert!(run(&cfg, Some(&sched), &b).status.success());
    for file in [HISTORY_FILE, VTK_FILE, FRAME_FILE] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn config_errors_exit_1_without_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"domain": {"lx": 2, "ly": 1, "lz": 1}, "elem_size": 0.1, "params": {"volfrac": 1.5}}"#).unwrap();
    let o = run(&bad, None, &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());

    let cfg = write_config(dir.path(), 3);
    let sched = dir.path().join("sched.json");
    fs::write(&sched, r#"[{"applied_at_iteration": 3, "command": {"type": "stop"}}, {"applied_at_iteration": 2, "command": {"type": "reset"}}]"#).unwrap();
    let o = run(&cfg, Some(&sched), &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());

    let o = run(&dir.path().join("missing.json"), None, &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(!out.exists());
}

#[test]
fn unsupported_problem_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("free.json");
    let mut problem = Problem::grid(4, 2, 2);
    problem.bcs.drag_id("face:z+", [0.0, 0.0, -1.0]).unwrap();
    let cfg = RunConfig::from_problem(&problem, OutputSpec::default());
    fs::write(&path, serde_json::to_string(&cfg).unwrap()).unwrap();
    let out = dir.path().join("out");
    let o = run(&path, None, &out);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("SingularSystem"));
    assert!(!out.exists());
}

#[test]
fn losing_the_support_mid_run_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 6);
    let sched = dir.path().join("sched.json");
    fs::write(&sched, r#"[{"applied_at_iteration": 3, "command": {"type": "tap_entity", "entity": "face:x-"}}]"#).unwrap();
    let out = dir.path().join("out");
    let o = run(&cfg, Some(&sched), &out);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));

    let csv = fs::read_to_string(out.join(HISTORY_FILE)).unwrap();
    assert_eq!(csv.lines().count(), 3, "header plus the two completed iterations");
    let frame = DensityFrame::decode(&fs::read(out.join(FRAME_FILE)).unwrap()).unwrap();
    assert_eq!(frame.iter, 2);
}

#[test]
fn stop_in_schedule_ends_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), 10);
    let sched = dir.path().join("sched.json");
    fs::write(&sched, r#"[{"applied_at_iteration": 4, "command": {"type": "stop"}}]"#).unwrap();
    let out = dir.path().join("out");
    let o = run(&cfg, Some(&sched), &out);
    assert!(o.status.success());
    let csv = fs::read_to_string(out.join(HISTORY_FILE)).unwrap();
    assert_eq!(csv.lines().count(), 4);
}
