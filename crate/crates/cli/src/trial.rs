//! Simulated hopping trials and jump-height extraction.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use hopper_core::config::Config;
use hopper_core::control::{retracted_pose, EsController, Phase};
use hopper_core::log::TrajectoryLog;
use hopper_core::model::Configuration;
use hopper_core::sim::{SimState, Simulator};

use crate::stats;

#[derive(Debug, Error)]
pub enum TrialError {
    #[error("invalid trial: {0}")]
    Invalid(String),
}

/// Torque source for a trial.
#[derive(Debug, Clone, PartialEq)]
pub enum ControllerKind {
    /// Energy-shaping state machine.
    Es,
    /// Zero torque on both joints.
    Zero,
    /// Plays back recorded torques tick by tick, then zero.
    Replay(Vec<[f64; 2]>),
}

impl ControllerKind {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerKind::Es => "es",
            ControllerKind::Zero => "zero",
            ControllerKind::Replay(_) => "replay",
        }
    }
}

/// Piecewise-constant commanded height.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeightSchedule {
    /// `(start time, height)`, sorted by start time, first at 0.
    pub segments: Vec<(f64, f64)>,
}

impl HeightSchedule {
    pub fn constant(height: f64) -> Self {
        Self {
            segments: vec![(0.0, height)],
        }
    }

    /// Heights from `from` up to `to` inclusive in increments of `step`, each
    /// held for `every` seconds.
    pub fn stepped(from: f64, to: f64, step: f64, every: f64) -> Self {
        let count = ((to - from) / step + 1e-9).floor() as usize + 1;
        let segments = (0..count)
            .map(|i| (i as f64 * every, from + i as f64 * step))
            .collect();
        Self { segments }
    }

    pub fn segment_at(&self, t: f64) -> usize {
        self.segments
            .iter()
            .rposition(|&(start, _)| start <= t + 1e-12)
            .unwrap_or(0)
    }

    pub fn height_at(&self, t: f64) -> f64 {
        self.segments[self.segment_at(t)].1
    }
}

/// One completed contact-free interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Flight {
    pub liftoff_t: f64,
    pub touchdown_t: f64,
    pub apex_t: f64,
    /// Highest base height during the flight, m.
    pub apex: f64,
}

/// Contact-free intervals of the log that end in contact and last at least
/// `min_duration`.
pub fn detect_flights(log: &TrajectoryLog, min_duration: f64) -> Vec<Flight> {
    let mut flights = Vec::new();
    let mut current: Option<Flight> = None;
    let mut was_contact = log.rows.first().map(|r| r.contact).unwrap_or(true);
    for row in &log.rows {
        if !row.contact {
            match current.as_mut() {
                Some(f) => {
                    if row.q[0] > f.apex {
                        f.apex = row.q[0];
                        f.apex_t = row.t;
                    }
                }
                None if was_contact => {
                    current = Some(Flight {
                        liftoff_t: row.t,
                        touchdown_t: row.t,
                        apex_t: row.t,
                        apex: row.q[0],
                    });
                }
                None => {}
            }
        } else if let Some(mut f) = current.take() {
            f.touchdown_t = row.t;
            if f.touchdown_t - f.liftoff_t >= min_duration {
                flights.push(f);
            }
        }
        was_contact = row.contact;
    }
    flights
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseEvent {
    pub t: f64,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentSummary {
    pub start: f64,
    pub end: f64,
    pub command: f64,
    /// Every apex whose time falls in the segment.
    pub apexes: Vec<f64>,
    /// Apexes after dropping the transient jumps.
    pub kept: Vec<f64>,
    /// Quartiles of `kept`, when any.
    pub quartiles: Option<[f64; 3]>,
}

impl SegmentSummary {
    pub fn median(&self) -> Option<f64> {
        self.quartiles.map(|q| q[1])
    }

    pub fn iqr(&self) -> Option<f64> {
        self.quartiles.map(|q| q[2] - q[0])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub controller: String,
    pub duration: f64,
    pub flights: Vec<Flight>,
    pub segments: Vec<SegmentSummary>,
    pub phases: Vec<PhaseEvent>,
    /// Set when the simulation diverged; the log ends there.
    pub error: Option<String>,
}

impl TrialReport {
    pub fn build(
        controller: &str,
        log: &TrajectoryLog,
        schedule: &HeightSchedule,
        duration: f64,
        discard: usize,
        min_flight: f64,
        phases: Vec<PhaseEvent>,
        error: Option<String>,
    ) -> Self {
        let flights = detect_flights(log, min_flight);
        let segments = schedule
            .segments
            .iter()
            .enumerate()
            .map(|(i, &(start, command))| {
                let end = schedule.segments.get(i + 1).map(|s| s.0).unwrap_or(duration);
                let apexes: Vec<f64> = flights
                    .iter()
                    .filter(|f| schedule.segment_at(f.apex_t) == i)
                    .map(|f| f.apex)
                    .collect();
                let kept: Vec<f64> = apexes.iter().skip(discard).copied().collect();
                let quartiles = (!kept.is_empty()).then(|| stats::quartiles(&kept));
                SegmentSummary {
                    start,
                    end,
                    command,
                    apexes,
                    kept,
                    quartiles,
                }
            })
            .collect();
        Self {
            controller: controller.to_owned(),
            duration,
            flights,
            segments,
            phases,
            error,
        }
    }

    /// One line per segment: command, jumps, median and IQR.
    pub fn summary(&self) -> String {
        let mut s = format!("controller {} flights {}\n", self.controller, self.flights.len());
        for seg in &self.segments {
            match seg.quartiles {
                Some(q) => s.push_str(&format!(
                    "command {:.3} m [{:.1}, {:.1}) s: {} jumps, {} kept, median {:.4} m, IQR {:.4} m\n",
                    seg.command,
                    seg.start,
                    seg.end,
                    seg.apexes.len(),
                    seg.kept.len(),
                    q[1],
                    q[2] - q[0]
                )),
                None => s.push_str(&format!(
                    "command {:.3} m [{:.1}, {:.1}) s: {} jumps, none kept\n",
                    seg.command,
                    seg.start,
                    seg.end,
                    seg.apexes.len()
                )),
            }
        }
        if let Some(e) = &self.error {
            s.push_str(&format!("error: {e}\n"));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub log: TrajectoryLog,
    pub report: TrialReport,
}

/// Runs one trial from the standing pose with the trial simulation preset.
pub fn run_trial(
    config: &Config,
    controller: &ControllerKind,
    schedule: &HeightSchedule,
    duration: f64,
) -> Result<TrialOutcome, TrialError> {
    if schedule.segments.is_empty() {
        return Err(TrialError::Invalid("empty height schedule".into()));
    }
    if !(duration > 0.0) {
        return Err(TrialError::Invalid("duration must be positive".into()));
    }
    let model = &config.model;
    let trial = &config.trial;
    let sim = Simulator::new(model.clone(), config.trial_sim.clone()).with_options(config.options.clone());
    let pose = retracted_pose(model, trial.start_retraction);
    let x0 = model.standing_height(pose[0], pose[1]);
    let initial = SimState::at_rest(Configuration::new(x0, pose[0], pose[1]));
    let control_dt = 1.0 / trial.control_rate;

    let mut phases = Vec::new();
    let result = match controller {
        ControllerKind::Es => {
            let gains = config.es.gains(model);
            let mut es = EsController::new(model.clone(), gains, schedule.height_at(0.0), &initial);
            phases.push(PhaseEvent {
                t: initial.t,
                phase: es.phase(),
            });
            sim.run_episode(
                initial,
                |s| {
                    es.set_desired_height(schedule.height_at(s.t));
                    let before = es.phase();
                    let tau = es.control(s);
                    if es.phase() != before {
                        phases.push(PhaseEvent { t: s.t, phase: es.phase() });
                    }
                    tau
                },
                duration,
                control_dt,
                trial.substeps,
            )
        }
        ControllerKind::Zero => sim.run_episode(initial, |_| [0.0, 0.0], duration, control_dt, trial.substeps),
        ControllerKind::Replay(torques) => {
            let mut tick = 0usize;
            sim.run_episode(
                initial,
                |_| {
                    let tau = torques.get(tick).copied().unwrap_or([0.0, 0.0]);
                    tick += 1;
                    tau
                },
                duration,
                control_dt,
                trial.substeps,
            )
        }
    };
    let (log, error) = match result {
        Ok(log) => (log, None),
        Err(e) => (e.log, Some(e.source.to_string())),
    };
    let report = TrialReport::build(
        controller.name(),
        &log,
        schedule,
        duration,
        trial.discard_jumps,
        trial.min_flight_time,
        phases,
        error,
    );
    Ok(TrialOutcome { log, report })
}
