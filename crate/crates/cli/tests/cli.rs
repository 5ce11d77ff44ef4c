use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use hopper_cli::commands::{cmd_run, ControllerArg, RunArgs};
use hopper_cli::trial::{detect_flights, run_trial, ControllerKind, HeightSchedule};
use hopper_core::config::Config;
use hopper_core::log::TrajectoryLog;

fn hopper(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hopper")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn short_run(controller: ControllerArg, heights: Vec<f64>, duration: f64) -> RunArgs {
    RunArgs {
        controller,
        heights,
        stepped: false,
        step_from: 0.25,
        step_to: 0.35,
        step_size: 0.02,
        step_every: 5.0,
        duration: Some(duration),
        control_rate: None,
        substeps: None,
        torques: None,
    }
}

#[test]
fn zero_controller_never_lifts_off() {
    let config = Config::default();
    let out = run_trial(&config, &ControllerKind::Zero, &HeightSchedule::constant(0.3), 3.0).unwrap();
    assert!(out.report.error.is_none());
    assert!(out.report.flights.is_empty());
    let x0 = out.log.rows[0].q[0];
    assert!(out.log.rows.iter().all(|r| r.q[0] <= x0 + 1e-9));
}

#[test]
fn es_trial_hops_near_command() {
    let config = Config::default();
    let out = run_trial(&config, &ControllerKind::Es, &HeightSchedule::constant(0.3), 6.0).unwrap();
    let seg = &out.report.segments[0];
    assert!(seg.kept.len() >= 5, "{}", out.report.summary());
    assert!((seg.median().unwrap() - 0.3).abs() < 0.03, "{}", out.report.summary());
    assert_eq!(out.report.flights, detect_flights(&out.log, config.trial.min_flight_time));
}

#[test]
fn run_writes_logs_figures_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let report = cmd_run(&Config::default(), &short_run(ControllerArg::Es, vec![0.25, 0.35], 4.0), 9, dir.path()).unwrap();
    assert_eq!(report.seed, 9);
    assert_eq!(report.trials.len(), 2);
    for name in ["run_250.csv", "run_350.csv", "run_250_height.svg", "run_350_height.svg", "jump_heights.svg", "report.json"] {
        assert!(dir.path().join(name).is_file(), "missing {name}");
    }
    let log = TrajectoryLog::load(dir.path().join("run_250.csv")).unwrap();
    assert_eq!(log.rows.len(), 4 * 400 + 1);
}

#[test]
fn replayed_torques_reproduce_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let config = Config::default();
    cmd_run(&config, &short_run(ControllerArg::Es, vec![0.3], 2.0), 0, &dir.path().join("es")).unwrap();
    let mut args = short_run(ControllerArg::Replay, vec![0.3], 2.0);
    args.torques = Some(dir.path().join("es/run.csv"));
    cmd_run(&config, &args, 0, &dir.path().join("replay")).unwrap();
    let a = TrajectoryLog::load(dir.path().join("es/run.csv")).unwrap();
    let b = TrajectoryLog::load(dir.path().join("replay/run.csv")).unwrap();
    assert_eq!(a.rows.len(), b.rows.len());
    let worst = a
        .rows
        .iter()
        .zip(&b.rows)
        .map(|(r, s)| (r.q[0] - s.q[0]).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-9, "replay drifted by {worst}");
}

#[test]
fn plot_is_byte_identical_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let config = Config::default();
    cmd_run(&config, &short_run(ControllerArg::Es, vec![0.3], 3.0), 0, dir.path()).unwrap();
    let log = dir.path().join("run.csv");
    let log = log.to_str().unwrap();
    let read = |out: &Path| {
        ["run_height.svg", "jump_heights.svg"]
            .iter()
            .map(|f| fs::read(out.join(f)).unwrap())
            .collect::<Vec<_>>()
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = hopper(&["--out", out.to_str().unwrap(), "plot", log]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(read(&a), read(&b));
    assert!(String::from_utf8(read(&a)[0].clone()).unwrap().starts_with("<svg"));
}

#[test]
fn plot_keeps_logs_with_the_same_name_apart() {
    let dir = tempfile::tempdir().unwrap();
    let config = Config::default();
    for sub in ["x", "y"] {
        cmd_run(&config, &short_run(ControllerArg::Zero, vec![0.3], 0.5), 0, &dir.path().join(sub)).unwrap();
    }
    let out = dir.path().join("plots");
    let o = hopper(&[
        "--out",
        out.to_str().unwrap(),
        "plot",
        dir.path().join("x/run.csv").to_str().unwrap(),
        dir.path().join("y/run.csv").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("run_height.svg").is_file());
    assert!(out.join("run_2_height.svg").is_file());
}

#[test]
fn invalid_config_is_a_single_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "[model]\nl1 = -0.1\n").unwrap();
    let o = hopper(&["--config", path.to_str().unwrap(), "--out", dir.path().to_str().unwrap(), "run", "--duration", "0.1"]);
    assert!(!o.status.success());
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[config]:"), "{err}");
    assert!(err.contains("l1"), "{err}");

    fs::write(&path, "[model\n").unwrap();
    let o = hopper(&["--config", path.to_str().unwrap(), "run"]);
    assert!(!o.status.success());
    assert_eq!(stderr(&o).lines().count(), 1, "{}", stderr(&o));
}

#[test]
fn usage_errors_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = hopper(&["--out", out, "run", "--controller", "replay"]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error[usage]:"), "{}", stderr(&o));

    let o = hopper(&["--out", out, "run", "--controller", "replay", "--torques", "/nonexistent.csv"]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error[io]:"), "{}", stderr(&o));

    let o = hopper(&["--out", out, "run", "--stepped", "--height", "0.3"]);
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error[usage]:"), "{}", stderr(&o));
}

#[test]
fn sysid_generate_replay_and_fit_chain() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = hopper(&["--out", out, "sysid", "generate", "--base", "fixed-base", "--total-duration", "9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let index = dir.path().join("trajectories.json");
    let files: Vec<serde_json::Value> = serde_json::from_str(&fs::read_to_string(&index).unwrap()).unwrap();
    assert_eq!(files.len(), 18);

    let replay_out = dir.path().join("logs");
    let o = hopper(&["--out", replay_out.to_str().unwrap(), "sysid", "replay", index.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(replay_out.join("manifest.json").is_file());
    assert!(replay_out.join("tracking.json").is_file());

    let fit_out = dir.path().join("fit");
    let o = hopper(&[
        "--out",
        fit_out.to_str().unwrap(),
        "sysid",
        "fit",
        "--manifest",
        replay_out.join("manifest.json").to_str().unwrap(),
        "--generations",
        "2",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["fit_report.json", "fit_table.txt", "fitted.toml"] {
        assert!(fit_out.join(name).is_file(), "missing {name}");
    }
    let fitted = fs::read_to_string(fit_out.join("fitted.toml")).unwrap();
    let o = hopper(&["--config", fit_out.join("fitted.toml").to_str().unwrap(), "--out", out, "run", "--duration", "0.2"]);
    assert!(o.status.success(), "fitted config rejected: {}\n{fitted}", stderr(&o));
}

#[test]
fn serve_stdio_answers_each_line() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_hopper"))
        .args(["serve", "--stdio"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(b"{\"cmd\":\"spec\"}\nnot json\n{\"cmd\":\"reset\",\"seed\":1}\n")
        .unwrap();
    let o = child.wait_with_output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    let lines: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0]["obs_dim"], 15);
    assert_eq!(lines[1]["type"], "error");
    assert_eq!(lines[2]["observation"].as_array().unwrap().len(), 15);
}
