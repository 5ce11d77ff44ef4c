//! Argument parsing and the `run`, `sysid`, `serve` and `plot` commands.

use std::fs;
use std::io::{self, BufReader, BufWriter};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use hopper_core::config::{Config, ConfigError};
use hopper_core::log::{LogError, TrajectoryLog};
use hopper_core::rlenv::protocol::{serve_stream, serve_tcp, ServerConfig};
use hopper_core::sysid::{
    self, BaseMode, FitReport, Manifest, ManifestEntry, ParamVector, RecordedRun, SysidError, TaskSample,
    TrajectorySpec,
};

use crate::plot::{self, Group};
use crate::stats::{self, RankSum};
use crate::trial::{self, ControllerKind, HeightSchedule, TrialError, TrialReport};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Trial(#[from] TrialError),
    #[error(transparent)]
    Sysid(#[from] SysidError),
    #[error("{0}")]
    Usage(String),
    #[error("simulation diverged: {0}")]
    Diverged(String),
    #[error("{0}")]
    Serve(String),
}

impl CliError {
    /// Short category used as the prefix of the error line.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } | CliError::Log(_) => "io",
            CliError::Trial(_) | CliError::Diverged(_) => "trial",
            CliError::Sysid(_) => "sysid",
            CliError::Usage(_) => "usage",
            CliError::Serve(_) => "serve",
        }
    }

    /// `error[kind]: message` on a single line.
    pub fn line(&self) -> String {
        let mut msg = self.to_string();
        let mut source = std::error::Error::source(self);
        while let Some(s) = source {
            let text = s.to_string();
            if !msg.contains(&text) {
                msg.push_str(": ");
                msg.push_str(&text);
            }
            source = s.source();
        }
        let msg = msg.split_whitespace().collect::<Vec<_>>().join(" ");
        format!("error[{}]: {msg}", self.kind())
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("reports serialize");
    write_file(path, text + "\n")
}

#[derive(Debug, Parser)]
#[command(name = "hopper", version, about = "Rail-mounted hopping leg: trials, system identification, RL environment")]
pub struct Cli {
    /// TOML configuration; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a hopping trial and report jump heights.
    Run(RunArgs),
    /// Identification trajectories, replay and parameter fitting.
    #[command(subcommand)]
    Sysid(SysidCommand),
    /// Serve the RL environment over newline-delimited JSON.
    Serve(ServeArgs),
    /// Render SVG figures from trajectory logs.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ControllerArg {
    Es,
    Zero,
    Replay,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, value_enum, default_value_t = ControllerArg::Es)]
    pub controller: ControllerArg,
    /// Commanded apex height, m. Repeat for one trial per height.
    #[arg(long = "height", value_name = "M")]
    pub heights: Vec<f64>,
    /// Raise the command in steps during a single trial.
    #[arg(long)]
    pub stepped: bool,
    #[arg(long, default_value_t = 0.25)]
    pub step_from: f64,
    #[arg(long, default_value_t = 0.35)]
    pub step_to: f64,
    #[arg(long, default_value_t = 0.02)]
    pub step_size: f64,
    /// Seconds per step.
    #[arg(long, default_value_t = 5.0)]
    pub step_every: f64,
    /// Trial length, s. Defaults to the config, or the whole schedule when stepped.
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long, value_name = "HZ")]
    pub control_rate: Option<f64>,
    #[arg(long)]
    pub substeps: Option<usize>,
    /// Log whose torque columns the replay controller plays back.
    #[arg(long, value_name = "CSV")]
    pub torques: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum SysidCommand {
    /// Write the identification trajectory grid.
    Generate(GenerateArgs),
    /// Track trajectories in simulation and record logs.
    Replay(ReplayArgs),
    /// Fit simulation parameters to recorded logs.
    Fit(FitArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BaseArg {
    FixedBase,
    MovingBase,
    Both,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum, default_value_t = BaseArg::Both)]
    pub base: BaseArg,
    /// Seconds of data per base configuration; defaults to the config.
    #[arg(long)]
    pub total_duration: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    /// Trajectory index written by `sysid generate`.
    pub trajectories: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Manifest pairing trajectory specs with recorded logs.
    #[arg(long, required_unless_present = "synthetic", conflicts_with = "synthetic")]
    pub manifest: Option<PathBuf>,
    /// Recover known parameters from data simulated with them.
    #[arg(long)]
    pub synthetic: bool,
    /// Seconds per run of the synthetic experiment.
    #[arg(long, default_value_t = 3.0)]
    pub run_duration: f64,
    /// Generations per pass; defaults to the config.
    #[arg(long)]
    pub generations: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Serve a single session on stdin/stdout.
    #[arg(long, conflicts_with = "port", required_unless_present = "port")]
    pub stdio: bool,
    #[arg(long)]
    pub port: Option<u16>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Trajectory logs in the canonical CSV schema.
    #[arg(required = true)]
    pub logs: Vec<PathBuf>,
}

pub fn load_config(path: Option<&Path>) -> Result<Config, CliError> {
    Ok(match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    })
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let config = load_config(cli.config.as_deref())?;
    match &cli.command {
        Command::Run(args) => {
            let report = cmd_run(&config, args, cli.seed, &cli.out)?;
            print!("{}", report.summary());
            match report.trials.iter().find_map(|t| t.error.clone()) {
                Some(e) => Err(CliError::Diverged(e)),
                None => Ok(()),
            }
        }
        Command::Sysid(SysidCommand::Generate(args)) => {
            let index = cmd_sysid_generate(&config, args, &cli.out)?;
            println!("wrote {} trajectories to {}", index.len(), cli.out.display());
            Ok(())
        }
        Command::Sysid(SysidCommand::Replay(args)) => {
            let summary = cmd_sysid_replay(&config, args, &cli.out)?;
            for s in &summary {
                println!(
                    "{}: rms error hip {:.4} rad, knee {:.4} rad, max {:.4} rad",
                    s.label, s.rms[0], s.rms[1], s.max
                );
            }
            Ok(())
        }
        Command::Sysid(SysidCommand::Fit(args)) => {
            let outcome = cmd_sysid_fit(&config, args, cli.seed, &cli.out)?;
            print!("{}", outcome.report.table());
            println!(
                "cost {:.4e} -> {:.4e} ({:.1}x)",
                outcome.report.initial_cost,
                outcome.report.final_cost,
                outcome.report.initial_cost / outcome.report.final_cost
            );
            Ok(())
        }
        Command::Serve(args) => cmd_serve(&config, args),
        Command::Plot(args) => {
            let written = cmd_plot(&config, args, &cli.out)?;
            for p in written {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
    }
}

/// Comparison of neighbouring trials in a multi-height run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub lower: f64,
    pub upper: f64,
    pub test: RankSum,
    /// Every kept apex of the lower command is below every kept apex of the upper.
    pub separated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub trials: Vec<TrialReport>,
    pub comparisons: Vec<Comparison>,
}

impl RunReport {
    pub fn summary(&self) -> String {
        let mut s: String = self.trials.iter().map(|t| t.summary()).collect();
        for c in &self.comparisons {
            s.push_str(&format!(
                "{:.3} vs {:.3}: rank-sum p {:.3e}, separated {}\n",
                c.lower, c.upper, c.test.p_value, c.separated
            ));
        }
        s
    }
}

pub fn compare(lower: (f64, &[f64]), upper: (f64, &[f64])) -> Option<Comparison> {
    if lower.1.is_empty() || upper.1.is_empty() {
        return None;
    }
    let max_lower = lower.1.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_upper = upper.1.iter().copied().fold(f64::INFINITY, f64::min);
    Some(Comparison {
        lower: lower.0,
        upper: upper.0,
        test: stats::rank_sum_test(lower.1, upper.1),
        separated: max_lower < min_upper,
    })
}

fn height_tag(h: f64) -> String {
    format!("{:.0}", h * 1000.0)
}

/// Runs the trials, writes logs, report and figures into `out`.
pub fn cmd_run(config: &Config, args: &RunArgs, seed: u64, out: &Path) -> Result<RunReport, CliError> {
    let mut config = config.clone();
    if let Some(rate) = args.control_rate {
        config.trial.control_rate = rate;
    }
    if let Some(n) = args.substeps {
        config.trial.substeps = n;
    }
    config.validate()?;

    let controller = match args.controller {
        ControllerArg::Es => ControllerKind::Es,
        ControllerArg::Zero => ControllerKind::Zero,
        ControllerArg::Replay => {
            let path = args
                .torques
                .as_ref()
                .ok_or_else(|| CliError::Usage("--controller replay needs --torques <CSV>".into()))?;
            let log = TrajectoryLog::load(path)?;
            ControllerKind::Replay(log.rows.iter().map(|r| r.tau).collect())
        }
    };

    let schedules: Vec<HeightSchedule> = if args.stepped {
        if !args.heights.is_empty() {
            return Err(CliError::Usage("--stepped and --height are exclusive".into()));
        }
        if !(args.step_size > 0.0 && args.step_every > 0.0 && args.step_to >= args.step_from) {
            return Err(CliError::Usage("stepped schedule needs step-size, step-every > 0 and step-to >= step-from".into()));
        }
        vec![HeightSchedule::stepped(args.step_from, args.step_to, args.step_size, args.step_every)]
    } else if args.heights.is_empty() {
        vec![HeightSchedule::constant(config.env.heights[config.env.heights.len() / 2])]
    } else {
        args.heights.iter().map(|&h| HeightSchedule::constant(h)).collect()
    };
    for s in &schedules {
        if s.segments.iter().any(|&(_, h)| !(h > 0.0 && h.is_finite())) {
            return Err(CliError::Usage("commanded heights must be positive".into()));
        }
    }
    let duration = match args.duration {
        Some(d) => d,
        None if args.stepped => schedules[0].segments.len() as f64 * args.step_every,
        None => config.trial.duration,
    };

    ensure_dir(out)?;
    let mut trials = Vec::new();
    let multiple = schedules.len() > 1;
    for schedule in &schedules {
        let outcome = trial::run_trial(&config, &controller, schedule, duration)?;
        let stem = if multiple {
            format!("run_{}", height_tag(schedule.segments[0].1))
        } else {
            "run".to_owned()
        };
        outcome.log.save(out.join(format!("{stem}.csv")))?;
        let title = format!("{} controller, base height", controller.name());
        write_file(
            &out.join(format!("{stem}_height.svg")),
            plot::base_height_svg(&outcome.log, Some(schedule), &title),
        )?;
        trials.push(outcome.report);
    }

    let groups: Vec<Group> = trials
        .iter()
        .flat_map(|t| t.segments.iter())
        .map(|seg| Group {
            label: format!("{:.2} m", seg.command),
            command: Some(seg.command),
            values: seg.kept.clone(),
        })
        .collect();
    write_file(
        &out.join("jump_heights.svg"),
        plot::distribution_svg(&groups, &format!("{} controller, jump heights", controller.name())),
    )?;

    let comparisons = if multiple {
        trials
            .windows(2)
            .filter_map(|w| {
                let (a, b) = (&w[0].segments[0], &w[1].segments[0]);
                compare((a.command, &a.kept), (b.command, &b.kept))
            })
            .collect()
    } else {
        Vec::new()
    };
    let report = RunReport {
        seed,
        trials,
        comparisons,
    };
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

/// One entry of the trajectory index written by `sysid generate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryFile {
    pub spec: TrajectorySpec,
    /// Samples CSV (`t,x,y`), relative to the index file.
    pub samples: PathBuf,
}

pub const TRAJECTORY_INDEX: &str = "trajectories.json";

pub fn cmd_sysid_generate(config: &Config, args: &GenerateArgs, out: &Path) -> Result<Vec<TrajectoryFile>, CliError> {
    let model = &config.model;
    let s = &config.sysid;
    let total = args.total_duration.unwrap_or(s.total_duration);
    let modes: &[BaseMode] = match args.base {
        BaseArg::FixedBase => &[BaseMode::FixedBase],
        BaseArg::MovingBase => &[BaseMode::MovingBase],
        BaseArg::Both => &[BaseMode::FixedBase, BaseMode::MovingBase],
    };
    ensure_dir(out)?;
    let mut index = Vec::new();
    for &mode in modes {
        for spec in sysid::identification_grid(mode, s.amplitude_scale(model), total, s.sample_rate) {
            let samples = sysid::generate(&spec, model)?;
            let name = PathBuf::from(format!("{}.traj.csv", spec.label()));
            write_samples(&out.join(&name), &samples)?;
            index.push(TrajectoryFile { spec, samples: name });
        }
    }
    write_json(&out.join(TRAJECTORY_INDEX), &index)?;
    Ok(index)
}

fn write_samples(path: &Path, samples: &[TaskSample]) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    for s in samples {
        w.serialize(s).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

fn read_samples(path: &Path) -> Result<Vec<TaskSample>, CliError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    csv::Reader::from_reader(BufReader::new(file))
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| csv_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::Io {
        path: path.display().to_string(),
        source: io::Error::new(io::ErrorKind::InvalidData, e.to_string()),
    }
}

fn read_index(path: &Path) -> Result<Vec<TrajectoryFile>, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Io {
        path: path.display().to_string(),
        source: io::Error::new(io::ErrorKind::InvalidData, e.to_string()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingSummary {
    pub label: String,
    /// Root-mean-square joint error (hip, knee), rad.
    pub rms: [f64; 2],
    pub max: f64,
}

/// Joint tracking error of a replay log against its targets, nearest sample
/// per row.
pub fn tracking_error(label: String, samples: &[TaskSample], targets: &[[f64; 2]], log: &TrajectoryLog) -> TrackingSummary {
    let mut sq = [0.0; 2];
    let mut max: f64 = 0.0;
    let (t0, t1) = (samples[0].t, samples[samples.len() - 1].t);
    let rate = if samples.len() > 1 {
        (samples.len() - 1) as f64 / (t1 - t0)
    } else {
        1.0
    };
    for row in &log.rows {
        let idx = (((row.t - t0) * rate).round().max(0.0) as usize).min(targets.len() - 1);
        for j in 0..2 {
            let e = targets[idx][j] - row.q[j + 1];
            sq[j] += e * e;
            max = max.max(e.abs());
        }
    }
    let n = log.rows.len().max(1) as f64;
    TrackingSummary {
        label,
        rms: [(sq[0] / n).sqrt(), (sq[1] / n).sqrt()],
        max,
    }
}

pub fn cmd_sysid_replay(config: &Config, args: &ReplayArgs, out: &Path) -> Result<Vec<TrackingSummary>, CliError> {
    let index = read_index(&args.trajectories)?;
    let dir = args.trajectories.parent().unwrap_or(Path::new("."));
    let replay = &config.sysid.fit.replay;
    ensure_dir(out)?;
    let mut manifest = Manifest { runs: Vec::new() };
    let mut summary = Vec::new();
    for entry in &index {
        let samples = read_samples(&dir.join(&entry.samples))?;
        if samples.is_empty() {
            return Err(SysidError::InvalidSpec(format!("{}: no samples", entry.samples.display())).into());
        }
        let targets = sysid::joint_targets(&samples, &config.model)?;
        let log = sysid::replay_targets(&samples, &targets, entry.spec.config, &config.model, &config.sim, replay)?;
        let name = PathBuf::from(format!("{}.csv", entry.spec.label()));
        log.save(out.join(&name))?;
        summary.push(tracking_error(entry.spec.label(), &samples, &targets, &log));
        manifest.runs.push(ManifestEntry {
            spec: entry.spec.clone(),
            log: name,
        });
    }
    manifest.save(out.join("manifest.json"))?;
    write_json(&out.join("tracking.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub fitted: ParamVector,
    pub report: FitReport,
}

pub fn cmd_sysid_fit(config: &Config, args: &FitArgs, seed: u64, out: &Path) -> Result<FitOutcome, CliError> {
    let model = &config.model;
    let s = &config.sysid;
    let mut settings = s.fit.clone();
    settings.pass1.seed = seed;
    settings.pass2.seed = seed.wrapping_add(1);
    if let Some(g) = args.generations {
        settings.pass1.max_generations = g;
        settings.pass2.max_generations = g;
    }

    let (fitted, report) = if args.synthetic {
        let specs = sysid::recovery_grid(s.amplitude_scale(model), args.run_duration, s.sample_rate);
        let runs = sysid::synthesize_runs(&specs, model, &config.sim, &settings.replay)?;
        sysid::synthetic_recovery(&runs, model, &config.sim, s.perturbation, s.initial_box, &settings)?
    } else {
        let path = args.manifest.as_ref().expect("clap requires --manifest without --synthetic");
        let manifest = Manifest::load(path)?;
        let runs: Vec<RecordedRun> = manifest.load_runs(path.parent().unwrap_or(Path::new(".")))?;
        let initial = ParamVector::around(&config.sim, s.initial_box);
        sysid::fit_parameters(&runs, model, &initial, &settings)?
    };

    ensure_dir(out)?;
    write_json(&out.join("fit_report.json"), &report)?;
    write_file(&out.join("fit_table.txt"), report.table())?;
    let mut fitted_config = config.clone();
    fitted_config.sim = fitted.to_params();
    fitted_config.save(out.join("fitted.toml"))?;
    Ok(FitOutcome { fitted, report })
}

pub fn server_config(config: &Config) -> ServerConfig {
    ServerConfig {
        model: config.model.clone(),
        params: config.sim.clone(),
        env: config.env.clone(),
    }
}

pub fn cmd_serve(config: &Config, args: &ServeArgs) -> Result<(), CliError> {
    let server = server_config(config);
    server.session().map_err(|e| CliError::Serve(e.to_string()))?;
    if args.stdio {
        // Replies are flushed line by line, so an interrupt loses nothing.
        ctrlc::set_handler(|| std::process::exit(0)).map_err(|e| CliError::Serve(e.to_string()))?;
        let stdin = io::stdin();
        let stdout = io::stdout();
        return serve_stream(&server, stdin.lock(), stdout.lock()).map_err(|e| CliError::Serve(e.to_string()));
    }
    let port = args.port.expect("clap requires --port without --stdio");
    let addr = format!("{}:{port}", args.host);
    let listener = TcpListener::bind(&addr).map_err(|e| CliError::Serve(format!("{addr}: {e}")))?;
    let shutdown = Arc::new(AtomicBool::new(false));
    let flag = Arc::clone(&shutdown);
    ctrlc::set_handler(move || flag.store(true, Ordering::SeqCst)).map_err(|e| CliError::Serve(e.to_string()))?;
    eprintln!("serving on {}", listener.local_addr().map(|a| a.to_string()).unwrap_or(addr));
    serve_tcp(&server, listener, shutdown).map_err(|e| CliError::Serve(e.to_string()))
}

/// One height trace per log and a jump-height box per log.
pub fn cmd_plot(config: &Config, args: &PlotArgs, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    ensure_dir(out)?;
    let mut written = Vec::new();
    let mut groups = Vec::new();
    for path in &args.logs {
        let log = TrajectoryLog::load(path)?;
        let base = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "log".into());
        let mut stem = base.clone();
        let mut n = 1;
        while groups.iter().any(|g: &Group| g.label == stem) {
            n += 1;
            stem = format!("{base}_{n}");
        }
        let target = out.join(format!("{stem}_height.svg"));
        write_file(&target, plot::base_height_svg(&log, None, &format!("{stem}, base height")))?;
        written.push(target);
        let apexes: Vec<f64> = trial::detect_flights(&log, config.trial.min_flight_time)
            .iter()
            .skip(config.trial.discard_jumps)
            .map(|f| f.apex)
            .collect();
        groups.push(Group {
            label: stem,
            command: None,
            values: apexes,
        });
    }
    let target = out.join("jump_heights.svg");
    write_file(&target, plot::distribution_svg(&groups, "jump heights"))?;
    written.push(target);
    Ok(written)
}
