//! Parameter identification: sinusoidal task-space trajectories, PD replay in
//! the simulator, the joint-tracking cost, and the two-pass CMA-ES fit.
//!
//! Trajectory samples live in a hip-attached frame whose `x` axis points down
//! the rail from the carriage, so `x` is the foot depth below the hip.

pub mod cmaes;

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::log::{LogError, TrajectoryLog};
use crate::model::{inverse_kinematics, Configuration, KinematicsError, RobotModel};
use crate::sim::{SimOptions, SimParams, SimState, Simulator};

pub use cmaes::{cmaes_minimize, Bounds, CmaesError, CmaesResult, CmaesSettings, GenerationRecord};

#[derive(Debug, Error)]
pub enum SysidError {
    #[error("invalid trajectory spec: {0}")]
    InvalidSpec(String),
    #[error("trajectory sample {index} is unreachable: {source}")]
    Unreachable {
        index: usize,
        #[source]
        source: KinematicsError,
    },
    #[error("logs are not aligned: {0}")]
    Alignment(String),
    #[error("replay failed: {0}")]
    Replay(String),
    #[error("invalid parameter vector: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Optimizer(#[from] CmaesError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseMode {
    /// Carriage locked above the ground, leg swinging freely.
    FixedBase,
    /// Carriage free on the rail, foot pushing on the ground.
    MovingBase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    pub config: BaseMode,
    /// Radial amplitude, m.
    pub amplitude: f64,
    /// Radial period, s.
    pub period1: f64,
    /// Sweep period of the leg angle, s. Unused for the moving base.
    pub period2: f64,
    pub duration: f64,
    pub sample_rate: f64,
}

impl TrajectorySpec {
    /// Offset of the radial oscillation so its far end reaches full extension.
    pub fn offset(&self, model: &RobotModel) -> f64 {
        model.leg_length() - self.amplitude
    }

    pub fn validate(&self, model: &RobotModel) -> Result<(), SysidError> {
        if !(self.amplitude > 0.0) {
            return Err(SysidError::InvalidSpec("amplitude must be positive".into()));
        }
        if !(self.period1 > 0.0 && self.period2 > 0.0) {
            return Err(SysidError::InvalidSpec("periods must be positive".into()));
        }
        if !(self.duration > 0.0 && self.sample_rate > 0.0) {
            return Err(SysidError::InvalidSpec(
                "duration and sample rate must be positive".into(),
            ));
        }
        if self.config == BaseMode::FixedBase && self.offset(model) < 0.0 {
            return Err(SysidError::InvalidSpec(format!(
                "amplitude {} exceeds the leg length {}",
                self.amplitude,
                model.leg_length()
            )));
        }
        Ok(())
    }

    fn times(&self) -> impl Iterator<Item = f64> + '_ {
        let n = (self.duration * self.sample_rate).round() as usize;
        (0..=n).map(move |i| i as f64 / self.sample_rate)
    }

    /// Short file-name friendly label.
    pub fn label(&self) -> String {
        let mode = match self.config {
            BaseMode::FixedBase => "fixed",
            BaseMode::MovingBase => "moving",
        };
        format!(
            "{mode}_a{:.3}_t{:.2}_s{:.0}",
            self.amplitude, self.period1, self.period2
        )
    }
}

/// Foot target in the hip frame at time `t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskSample {
    pub t: f64,
    pub x: f64,
    pub y: f64,
}

pub fn generate_fixed_base(spec: &TrajectorySpec, model: &RobotModel) -> Result<Vec<TaskSample>, SysidError> {
    spec.validate(model)?;
    let eps = spec.offset(model);
    Ok(spec
        .times()
        .map(|t| {
            let r = spec.amplitude * (2.0 * PI * t / spec.period1).cos() + eps;
            let theta = -0.5 * PI * (2.0 * PI * t / spec.period2).cos();
            TaskSample {
                t,
                x: r * theta.cos(),
                y: r * theta.sin(),
            }
        })
        .collect())
}

pub fn generate_moving_base(spec: &TrajectorySpec, model: &RobotModel) -> Result<Vec<TaskSample>, SysidError> {
    spec.validate(model)?;
    let eps = spec.offset(model);
    Ok(spec
        .times()
        .map(|t| TaskSample {
            t,
            x: spec.amplitude * (2.0 * PI * t / spec.period1).cos() + eps,
            y: 0.0,
        })
        .collect())
}

pub fn generate(spec: &TrajectorySpec, model: &RobotModel) -> Result<Vec<TaskSample>, SysidError> {
    match spec.config {
        BaseMode::FixedBase => generate_fixed_base(spec, model),
        BaseMode::MovingBase => generate_moving_base(spec, model),
    }
}

/// The identification grid: every combination of radial period, sweep period
/// and amplitude, sharing `total_duration` seconds per base configuration.
/// Amplitudes are multiplied by `amplitude_scale`. The moving base ignores the
/// sweep period, so it gets one trajectory per (period, amplitude) pair.
pub fn identification_grid(
    config: BaseMode,
    amplitude_scale: f64,
    total_duration: f64,
    sample_rate: f64,
) -> Vec<TrajectorySpec> {
    const T1: [f64; 3] = [0.75, 0.5, 0.25];
    const T2: [f64; 2] = [10.0, 20.0];
    const A: [f64; 3] = [0.15, 0.1, 0.05];
    let sweeps: &[f64] = match config {
        BaseMode::FixedBase => &T2,
        BaseMode::MovingBase => &T2[..1],
    };
    let count = T1.len() * sweeps.len() * A.len();
    let duration = total_duration / count as f64;
    let mut specs = Vec::with_capacity(count);
    for &period1 in &T1 {
        for &period2 in sweeps {
            for &a in &A {
                specs.push(TrajectorySpec {
                    config,
                    amplitude: a * amplitude_scale,
                    period1,
                    period2,
                    duration,
                    sample_rate,
                });
            }
        }
    }
    specs
}

/// Joint PD used to track the trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplaySettings {
    /// Proportional gains (hip, knee), N m/rad.
    pub kp: [f64; 2],
    /// Derivative gains (hip, knee), N m s/rad.
    pub kd: [f64; 2],
    pub control_rate: f64,
    pub substeps: usize,
    /// Height of the locked carriage above full leg extension, m.
    pub base_clearance: f64,
}

impl Default for ReplaySettings {
    fn default() -> Self {
        Self {
            kp: [150.0, 80.0],
            kd: [0.5, 0.2],
            control_rate: 200.0,
            substeps: 5,
            base_clearance: 0.05,
        }
    }
}

/// Joint targets for every sample, knee-backward branch.
pub fn joint_targets(samples: &[TaskSample], model: &RobotModel) -> Result<Vec<[f64; 2]>, SysidError> {
    samples
        .iter()
        .enumerate()
        .map(|(index, s)| {
            inverse_kinematics(model, 0.0, Vector2::new(-s.x, s.y))
                .map(|cfg| cfg.joints())
                .map_err(|source| SysidError::Unreachable { index, source })
        })
        .collect()
}

/// Tracks precomputed joint targets in the simulator and records the log.
///
/// The target at each control tick is the sample nearest in time; the run
/// lasts as long as the last sample.
pub fn replay_targets(
    samples: &[TaskSample],
    targets: &[[f64; 2]],
    mode: BaseMode,
    model: &RobotModel,
    params: &SimParams,
    settings: &ReplaySettings,
) -> Result<TrajectoryLog, SysidError> {
    let first = samples
        .first()
        .ok_or_else(|| SysidError::InvalidSpec("empty trajectory".into()))?;
    let last = samples.last().expect("non-empty");
    let q0 = targets[0];
    let (carriage, options) = match mode {
        BaseMode::FixedBase => (
            model.leg_length() + settings.base_clearance,
            SimOptions {
                base_locked: true,
                ..SimOptions::default()
            },
        ),
        BaseMode::MovingBase => (model.standing_height(q0[0], q0[1]), SimOptions::default()),
    };
    let sim = Simulator::new(model.clone(), params.clone()).with_options(options);
    let mut initial = SimState::at_rest(Configuration::new(carriage, q0[0], q0[1]));
    initial.t = first.t;

    let control_dt = 1.0 / settings.control_rate;
    let rate = if samples.len() > 1 {
        (samples.len() - 1) as f64 / (last.t - first.t)
    } else {
        settings.control_rate
    };
    let (kp, kd) = (settings.kp, settings.kd);
    let controller = |s: &SimState| {
        let idx = (((s.t - first.t) * rate).round().max(0.0) as usize).min(targets.len() - 1);
        let q = targets[idx];
        [
            kp[0] * (q[0] - s.q[1]) - kd[0] * s.qd[1],
            kp[1] * (q[1] - s.q[2]) - kd[1] * s.qd[2],
        ]
    };
    sim.run_episode(initial, controller, last.t - first.t, control_dt, settings.substeps)
        .map_err(|e| SysidError::Replay(e.source.to_string()))
}

pub fn replay(
    samples: &[TaskSample],
    mode: BaseMode,
    model: &RobotModel,
    params: &SimParams,
    settings: &ReplaySettings,
) -> Result<TrajectoryLog, SysidError> {
    let targets = joint_targets(samples, model)?;
    replay_targets(samples, &targets, mode, model, params, settings)
}

/// Sum over ticks of squared hip and knee position differences.
pub fn trajectory_cost(sim: &TrajectoryLog, real: &TrajectoryLog) -> Result<f64, SysidError> {
    if sim.len() != real.len() {
        return Err(SysidError::Alignment(format!(
            "{} simulated samples against {} recorded",
            sim.len(),
            real.len()
        )));
    }
    let mut cost = 0.0;
    for (i, (a, b)) in sim.rows.iter().zip(&real.rows).enumerate() {
        if (a.t - b.t).abs() > 1e-6 {
            return Err(SysidError::Alignment(format!(
                "sample {i} at t = {} vs t = {}",
                a.t, b.t
            )));
        }
        cost += (a.q[1] - b.q[1]).powi(2) + (a.q[2] - b.q[2]).powi(2);
    }
    Ok(cost)
}

/// Which pass-1 treatment a parameter gets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    /// Friction loss, damping and armature.
    Joint,
    Inertia,
    Solver,
}

pub const PARAM_NAMES: [&str; 12] = [
    "rail_frictionloss",
    "rail_damping",
    "hip_frictionloss",
    "knee_frictionloss",
    "hip_damping",
    "knee_damping",
    "hip_armature",
    "knee_armature",
    "iz1",
    "iz2",
    "contact_time_constant",
    "contact_damping_ratio",
];

pub fn param_group(name: &str) -> ParamGroup {
    match name {
        "iz1" | "iz2" => ParamGroup::Inertia,
        "contact_time_constant" | "contact_damping_ratio" => ParamGroup::Solver,
        _ => ParamGroup::Joint,
    }
}

fn param_values(p: &SimParams) -> [f64; 12] {
    [
        p.rail_frictionloss,
        p.rail_damping,
        p.hip_frictionloss,
        p.knee_frictionloss,
        p.hip_damping,
        p.knee_damping,
        p.hip_armature,
        p.knee_armature,
        p.iz1,
        p.iz2,
        p.contact_time_constant,
        p.contact_damping_ratio,
    ]
}

fn params_from_values(v: &[f64; 12]) -> SimParams {
    SimParams {
        rail_frictionloss: v[0],
        rail_damping: v[1],
        hip_frictionloss: v[2],
        knee_frictionloss: v[3],
        hip_damping: v[4],
        knee_damping: v[5],
        hip_armature: v[6],
        knee_armature: v[7],
        iz1: v[8],
        iz2: v[9],
        contact_time_constant: v[10],
        contact_damping_ratio: v[11],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub value: f64,
    pub lower: f64,
    pub upper: f64,
    pub frozen: bool,
}

/// Every simulation parameter with its search box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    pub entries: Vec<ParamEntry>,
}

impl ParamVector {
    /// Bounds `[v / factor, v * factor]` around each value, nothing frozen.
    pub fn around(params: &SimParams, factor: f64) -> Self {
        let entries = PARAM_NAMES
            .iter()
            .zip(param_values(params))
            .map(|(name, value)| ParamEntry {
                name: (*name).to_owned(),
                value,
                lower: value / factor,
                upper: value * factor,
                frozen: false,
            })
            .collect();
        Self { entries }
    }

    pub fn to_params(&self) -> SimParams {
        let mut v = [0.0; 12];
        for (slot, e) in v.iter_mut().zip(&self.entries) {
            *slot = e.value;
        }
        params_from_values(&v)
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn validate(&self) -> Result<(), SysidError> {
        if self.entries.len() != PARAM_NAMES.len()
            || self.entries.iter().zip(PARAM_NAMES).any(|(e, n)| e.name != n)
        {
            return Err(SysidError::InvalidParams(format!(
                "entries must be exactly {PARAM_NAMES:?} in order"
            )));
        }
        for e in &self.entries {
            if !(e.lower <= e.value && e.value <= e.upper) {
                return Err(SysidError::InvalidParams(format!(
                    "{} = {} outside [{}, {}]",
                    e.name, e.value, e.lower, e.upper
                )));
            }
        }
        self.to_params()
            .validate()
            .map_err(|e| SysidError::InvalidParams(e.to_string()))
    }

    fn free(&self) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| !e.frozen && e.upper > e.lower)
            .map(|(i, _)| i)
            .collect()
    }

    /// Position of each free value inside its box, log-scaled when the box is
    /// strictly positive.
    fn encode(&self, free: &[usize]) -> Vec<f64> {
        free.iter()
            .map(|&i| {
                let e = &self.entries[i];
                if e.lower > 0.0 {
                    (e.value / e.lower).ln() / (e.upper / e.lower).ln()
                } else {
                    (e.value - e.lower) / (e.upper - e.lower)
                }
            })
            .collect()
    }

    fn decode(&self, free: &[usize], u: &[f64]) -> Self {
        let mut out = self.clone();
        for (&i, &ui) in free.iter().zip(u) {
            let e = &mut out.entries[i];
            let ui = ui.clamp(0.0, 1.0);
            e.value = if e.lower > 0.0 {
                e.lower * (e.upper / e.lower).powf(ui)
            } else {
                e.lower + ui * (e.upper - e.lower)
            };
            e.value = e.value.clamp(e.lower, e.upper);
        }
        out
    }
}

/// A recorded run: the commanded trajectory and the log it produced.
#[derive(Debug, Clone)]
pub struct RecordedRun {
    pub spec: TrajectorySpec,
    pub log: TrajectoryLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    pub pass1: CmaesSettings,
    pub pass2: CmaesSettings,
    /// Second-pass box factor around the first-pass joint parameters.
    pub rho: f64,
    pub replay: ReplaySettings,
}

impl Default for FitSettings {
    fn default() -> Self {
        let pass = CmaesSettings {
            sigma0: 0.2,
            max_generations: 300,
            ..CmaesSettings::default()
        };
        Self {
            pass1: pass.clone(),
            pass2: CmaesSettings { seed: 1, ..pass },
            rho: 3.0,
            replay: ReplaySettings::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassReport {
    pub name: String,
    pub free: Vec<String>,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub evaluations: usize,
    pub history: Vec<GenerationRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub name: String,
    pub initial: f64,
    pub fitted: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub passes: Vec<PassReport>,
    pub parameters: Vec<ParamRow>,
}

impl FitReport {
    /// Fitted values laid out as a joint table and a scalar table.
    pub fn table(&self) -> String {
        let v = |name: &str| {
            self.parameters
                .iter()
                .find(|r| r.name == name)
                .map(|r| r.fitted)
                .unwrap_or(f64::NAN)
        };
        let mut s = String::new();
        s.push_str("| Joint | Friction loss | Damping | Armature |\n|---|---|---|---|\n");
        s.push_str(&format!(
            "| Rail Prismatic Joint | {:.4} | {:.4} | - |\n",
            v("rail_frictionloss"),
            v("rail_damping")
        ));
        s.push_str(&format!(
            "| Hip Joint | {:.4} | {:.4} | {:.5} |\n",
            v("hip_frictionloss"),
            v("hip_damping"),
            v("hip_armature")
        ));
        s.push_str(&format!(
            "| Knee Joint | {:.4} | {:.4} | {:.5} |\n\n",
            v("knee_frictionloss"),
            v("knee_damping"),
            v("knee_armature")
        ));
        s.push_str("| Parameter | Value |\n|---|---|\n");
        s.push_str(&format!("| Hip Link Z Inertia | {:.6} |\n", v("iz1")));
        s.push_str(&format!("| Knee Link Z Inertia | {:.6} |\n", v("iz2")));
        s.push_str(&format!("| Time Constant | {:.4} |\n", v("contact_time_constant")));
        s.push_str(&format!("| Damping Ratio | {:.4} |\n", v("contact_damping_ratio")));
        s
    }
}

struct Prepared<'a> {
    runs: &'a [RecordedRun],
    samples: Vec<Vec<TaskSample>>,
    targets: Vec<Vec<[f64; 2]>>,
}

impl<'a> Prepared<'a> {
    fn new(runs: &'a [RecordedRun], model: &RobotModel) -> Result<Self, SysidError> {
        let mut samples = Vec::with_capacity(runs.len());
        let mut targets = Vec::with_capacity(runs.len());
        for run in runs {
            let s = generate(&run.spec, model)?;
            targets.push(joint_targets(&s, model)?);
            samples.push(s);
        }
        Ok(Self {
            runs,
            samples,
            targets,
        })
    }

    fn cost(&self, model: &RobotModel, params: &SimParams, replay: &ReplaySettings) -> Result<f64, SysidError> {
        let mut total = 0.0;
        for ((run, samples), targets) in self.runs.iter().zip(&self.samples).zip(&self.targets) {
            let log = replay_targets(samples, targets, run.spec.config, model, params, replay)?;
            total += trajectory_cost(&log, &run.log)?;
        }
        Ok(total)
    }
}

/// Total tracking cost of `params` against every recorded run.
pub fn total_cost(
    runs: &[RecordedRun],
    model: &RobotModel,
    params: &SimParams,
    replay: &ReplaySettings,
) -> Result<f64, SysidError> {
    Prepared::new(runs, model)?.cost(model, params, replay)
}

fn run_pass(
    name: &str,
    prepared: &Prepared<'_>,
    model: &RobotModel,
    start: &ParamVector,
    settings: &CmaesSettings,
    replay: &ReplaySettings,
) -> Result<(ParamVector, PassReport), SysidError> {
    let free = start.free();
    let initial_cost = prepared.cost(model, &start.to_params(), replay)?;
    let names = free.iter().map(|&i| start.entries[i].name.clone()).collect();
    if free.is_empty() {
        let report = PassReport {
            name: name.to_owned(),
            free: names,
            initial_cost,
            final_cost: initial_cost,
            evaluations: 1,
            history: Vec::new(),
        };
        return Ok((start.clone(), report));
    }
    let objective = |u: &[f64]| {
        let candidate = start.decode(&free, u).to_params();
        prepared.cost(model, &candidate, replay).unwrap_or(f64::INFINITY)
    };
    let bounds = Bounds::new(vec![0.0; free.len()], vec![1.0; free.len()]);
    let result = cmaes_minimize(objective, &start.encode(&free), settings, Some(&bounds))?;
    let fitted = start.decode(&free, &result.x);
    let report = PassReport {
        name: name.to_owned(),
        free: names,
        initial_cost,
        final_cost: result.cost,
        evaluations: result.evaluations,
        history: result.history,
    };
    Ok((fitted, report))
}

/// Two-pass fit. Pass 1 freezes inertias and contact-solver parameters and
/// fits the joint parameters; pass 2 frees everything, with the joint
/// parameters boxed to `[x / rho, x * rho]` around the pass-1 result.
pub fn fit_parameters(
    runs: &[RecordedRun],
    model: &RobotModel,
    initial: &ParamVector,
    settings: &FitSettings,
) -> Result<(ParamVector, FitReport), SysidError> {
    initial.validate()?;
    let prepared = Prepared::new(runs, model)?;

    let mut pass1_start = initial.clone();
    for e in &mut pass1_start.entries {
        if param_group(&e.name) != ParamGroup::Joint {
            e.frozen = true;
        }
    }
    let (after1, report1) = run_pass("pass1", &prepared, model, &pass1_start, &settings.pass1, &settings.replay)?;

    let mut pass2_start = after1.clone();
    for (e, orig) in pass2_start.entries.iter_mut().zip(&initial.entries) {
        e.frozen = orig.frozen;
        if param_group(&e.name) == ParamGroup::Joint {
            e.lower = e.value / settings.rho;
            e.upper = e.value * settings.rho;
        }
    }
    let (fitted, report2) = run_pass("pass2", &prepared, model, &pass2_start, &settings.pass2, &settings.replay)?;

    let parameters = fitted
        .entries
        .iter()
        .zip(&initial.entries)
        .map(|(f, i)| ParamRow {
            name: f.name.clone(),
            initial: i.value,
            fitted: f.value,
            lower: f.lower,
            upper: f.upper,
        })
        .collect();
    let report = FitReport {
        initial_cost: report1.initial_cost,
        final_cost: report2.final_cost,
        passes: vec![report1, report2],
        parameters,
    };
    Ok((fitted, report))
}

/// Reduced grid for the synthetic recovery experiment: the two largest grid
/// amplitudes (times `amplitude_scale`), two fixed-base and two moving-base
/// runs of `duration` seconds each.
pub fn recovery_grid(amplitude_scale: f64, duration: f64, sample_rate: f64) -> Vec<TrajectorySpec> {
    let spec = |config, amplitude: f64, period1| TrajectorySpec {
        config,
        amplitude: amplitude * amplitude_scale,
        period1,
        period2: 10.0,
        duration,
        sample_rate,
    };
    vec![
        spec(BaseMode::FixedBase, 0.15, 0.5),
        spec(BaseMode::FixedBase, 0.1, 0.25),
        spec(BaseMode::MovingBase, 0.1, 0.25),
        spec(BaseMode::MovingBase, 0.15, 0.5),
    ]
}

/// Replays every spec with `truth` to produce recorded runs.
pub fn synthesize_runs(
    specs: &[TrajectorySpec],
    model: &RobotModel,
    truth: &SimParams,
    replay_settings: &ReplaySettings,
) -> Result<Vec<RecordedRun>, SysidError> {
    specs
        .iter()
        .map(|spec| {
            let samples = generate(spec, model)?;
            let log = replay(&samples, spec.config, model, truth, replay_settings)?;
            Ok(RecordedRun {
                spec: spec.clone(),
                log,
            })
        })
        .collect()
}

/// Fits from `truth` scaled by `perturbation`, with boxes of `initial_box`
/// around that start.
pub fn synthetic_recovery(
    runs: &[RecordedRun],
    model: &RobotModel,
    truth: &SimParams,
    perturbation: f64,
    initial_box: f64,
    settings: &FitSettings,
) -> Result<(ParamVector, FitReport), SysidError> {
    let mut start = ParamVector::around(truth, 1.0);
    for e in &mut start.entries {
        e.value *= perturbation;
    }
    let initial = ParamVector::around(&start.to_params(), initial_box);
    fit_parameters(runs, model, &initial, settings)
}

/// Pairs trajectory specs with recorded log files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub runs: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub spec: TrajectorySpec,
    /// Log path, relative to the manifest file.
    pub log: PathBuf,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SysidError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| SysidError::Manifest(format!("{}: {e}", path.as_ref().display())))?;
        serde_json::from_str(&text).map_err(|e| SysidError::Manifest(e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SysidError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| SysidError::Manifest(e.to_string()))?;
        std::fs::write(path.as_ref(), text + "\n")
            .map_err(|e| SysidError::Manifest(format!("{}: {e}", path.as_ref().display())))
    }

    /// Reads every referenced log, resolving paths against `dir`.
    pub fn load_runs(&self, dir: impl AsRef<Path>) -> Result<Vec<RecordedRun>, SysidError> {
        self.runs
            .iter()
            .map(|entry| {
                let log = TrajectoryLog::load(dir.as_ref().join(&entry.log))?;
                Ok(RecordedRun {
                    spec: entry.spec.clone(),
                    log,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(config: BaseMode) -> TrajectorySpec {
        TrajectorySpec {
            config,
            amplitude: 0.05,
            period1: 0.5,
            period2: 10.0,
            duration: 1.0,
            sample_rate: 200.0,
        }
    }

    #[test]
    fn fixed_base_starts_sideways_at_full_reach() {
        let model = RobotModel::default();
        let s = generate_fixed_base(&spec(BaseMode::FixedBase), &model).unwrap();
        assert_eq!(s.len(), 201);
        assert!(s[0].x.abs() < 1e-15);
        assert!((s[0].y + model.leg_length()).abs() < 1e-15);
    }

    #[test]
    fn moving_base_stays_vertical() {
        let model = RobotModel::default();
        let sp = spec(BaseMode::MovingBase);
        let eps = sp.offset(&model);
        for s in generate_moving_base(&sp, &model).unwrap() {
            assert_eq!(s.y, 0.0);
            assert!(s.x >= eps - sp.amplitude - 1e-15 && s.x <= eps + sp.amplitude + 1e-15);
        }
    }

    #[test]
    fn spec_validation() {
        let model = RobotModel::default();
        let mut sp = spec(BaseMode::FixedBase);
        sp.amplitude = model.leg_length() + 0.01;
        assert!(sp.validate(&model).is_err());
        sp.amplitude = 0.0;
        assert!(sp.validate(&model).is_err());
    }

    #[test]
    fn grid_shares_total_duration() {
        let fixed = identification_grid(BaseMode::FixedBase, 1.0, 240.0, 200.0);
        assert_eq!(fixed.len(), 18);
        let total: f64 = fixed.iter().map(|s| s.duration).sum();
        assert!((total - 240.0).abs() < 1e-9);
        let moving = identification_grid(BaseMode::MovingBase, 0.5, 240.0, 200.0);
        assert_eq!(moving.len(), 9);
        assert!((moving[0].amplitude - 0.075).abs() < 1e-15);
    }

    #[test]
    fn unreachable_sample_is_named() {
        let model = RobotModel::default();
        let samples = [
            TaskSample { t: 0.0, x: 0.1, y: 0.0 },
            TaskSample { t: 0.005, x: 0.3, y: 0.0 },
        ];
        match joint_targets(&samples, &model) {
            Err(SysidError::Unreachable { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn param_vector_roundtrip() {
        let p = SimParams::default();
        let v = ParamVector::around(&p, 2.0);
        v.validate().unwrap();
        assert_eq!(v.to_params(), p);
        let free = v.free();
        let back = v.decode(&free, &v.encode(&free));
        for (a, b) in back.entries.iter().zip(&v.entries) {
            assert!((a.value - b.value).abs() <= 1e-12 * b.value.abs());
        }
        assert_eq!(param_group("iz2"), ParamGroup::Inertia);
        assert_eq!(param_group("contact_damping_ratio"), ParamGroup::Solver);
        assert_eq!(param_group("knee_armature"), ParamGroup::Joint);
    }

    #[test]
    fn cost_examples() {
        let model = RobotModel::default();
        let samples = generate(&spec(BaseMode::FixedBase), &model).unwrap();
        let log = replay(&samples, BaseMode::FixedBase, &model, &SimParams::default(), &ReplaySettings::default()).unwrap();
        assert_eq!(trajectory_cost(&log, &log).unwrap(), 0.0);
        let mut shifted = log.clone();
        shifted.rows.truncate(100);
        let base = TrajectoryLog {
            rows: log.rows[..100].to_vec(),
        };
        for r in &mut shifted.rows {
            r.q[1] += 0.1;
        }
        let c = trajectory_cost(&shifted, &base).unwrap();
        assert!((c - 1.0).abs() < 1e-12);
        assert_eq!(c, trajectory_cost(&base, &shifted).unwrap());
        assert!(matches!(trajectory_cost(&log, &base), Err(SysidError::Alignment(_))));
    }
}
