//! Hopping MDP: stacked proprioceptive observations, normalized torque
//! actions, the five-term reward, and delay/noise randomization.
//!
//! Observation layout (15 values): three blocks of
//! `[q_hip, q_knee, qd_hip, qd_knee, x_d]`, newest block first. Positions are
//! scaled to [-1, 1] over the joint limits, velocities by `qd_max`, and the
//! desired height by `height_scale`. Base height is never observed.

pub mod protocol;

use std::collections::VecDeque;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::retracted_pose;
use crate::model::{Configuration, RobotModel};
use crate::sim::{SimParams, SimState, Simulator};

pub const OBS_DIM: usize = 15;
pub const ACT_DIM: usize = 2;
/// Observed time steps.
pub const STACK: usize = 3;

pub type Observation = [f64; OBS_DIM];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("step called before reset")]
    NotReset,
    #[error("step called after the episode terminated; reset first")]
    Terminated,
    #[error("invalid action: {0}")]
    InvalidAction(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("desired height can only change mid-episode in evaluation mode")]
    CommandLocked,
}

/// `ẋ² + (x - x_o)²`.
pub fn reward_energy(x: f64, xd: f64, x_o: f64) -> f64 {
    xd * xd + (x - x_o).powi(2)
}

/// Exponential barrier above the desired height.
pub fn reward_height_barrier(x: f64, x_d: f64) -> f64 {
    if x >= x_d {
        (x - x_d).exp() - 1.0
    } else {
        0.0
    }
}

pub fn reward_jerk(a: [f64; ACT_DIM], a_prev: [f64; ACT_DIM]) -> f64 {
    a.iter().zip(&a_prev).map(|(x, y)| (x - y).powi(2)).sum()
}

pub fn reward_joint_position(q: [f64; 2], q_low: [f64; 2], q_high: [f64; 2]) -> f64 {
    (0..2)
        .map(|i| {
            let (v, lo, hi) = (q[i], q_low[i], q_high[i]);
            if v >= lo && v <= hi {
                (-10.0 * (v - lo)).exp() + (10.0 * (v - hi)).exp()
            } else {
                1.0
            }
        })
        .sum()
}

pub fn reward_joint_velocity(qd: [f64; 2], qd_max: [f64; 2]) -> f64 {
    (0..2)
        .map(|i| {
            if qd[i].abs() <= qd_max[i] {
                0.0
            } else {
                qd[i] * qd[i] - qd_max[i] * qd_max[i]
            }
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardWeights {
    pub energy: f64,
    pub height: f64,
    pub jerk: f64,
    pub joint_position: f64,
    pub joint_velocity: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            energy: 0.5,
            height: 2.0,
            jerk: 0.05,
            joint_position: 0.02,
            joint_velocity: 0.005,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub g_e: f64,
    pub p_h: f64,
    pub p_j: f64,
    pub p_jp: f64,
    pub p_jv: f64,
    pub total: f64,
}

pub fn total_reward(g_e: f64, p_h: f64, p_j: f64, p_jp: f64, p_jv: f64, w: &RewardWeights) -> RewardBreakdown {
    let total = w.energy * g_e - w.height * p_h - w.jerk * p_j - w.joint_position * p_jp - w.joint_velocity * p_jv;
    RewardBreakdown {
        g_e,
        p_h,
        p_j,
        p_jp,
        p_jv,
        total,
    }
}

/// `value + U(-λ|value|, λ|value|)`. One uniform draw per call.
pub fn apply_noise<R: Rng + ?Sized>(value: f64, lambda: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random_range(-1.0..=1.0);
    value + lambda * value.abs() * u
}

/// Joint reading kept in the delay buffer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointSample {
    pub q: [f64; 2],
    pub qd: [f64; 2],
}

/// `count` distinct indices into a buffer of `len`, ascending.
pub fn sample_delay_indices<R: Rng + ?Sized>(rng: &mut R, len: usize, count: usize) -> Vec<usize> {
    let mut idx = index::sample(rng, len, count).into_vec();
    idx.sort_unstable();
    idx
}

/// Scales observations into roughly unit ranges.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalization {
    pub q_low: [f64; 2],
    pub q_high: [f64; 2],
    pub qd_max: [f64; 2],
    pub height_scale: f64,
}

impl Normalization {
    pub fn new(model: &RobotModel, height_scale: f64) -> Self {
        Self {
            q_low: model.q_low,
            q_high: model.q_high,
            qd_max: model.qd_max,
            height_scale,
        }
    }

    fn block(&self, s: &JointSample, x_d: f64) -> [f64; 5] {
        let pos = |i: usize| 2.0 * (s.q[i] - self.q_low[i]) / (self.q_high[i] - self.q_low[i]) - 1.0;
        [
            pos(0),
            pos(1),
            s.qd[0] / self.qd_max[0],
            s.qd[1] / self.qd_max[1],
            x_d / self.height_scale,
        ]
    }
}

/// Builds the stacked observation from a buffer ordered oldest to newest.
///
/// With probability `delay_prob` three distinct buffer entries are drawn and
/// kept in temporal order; otherwise the three newest are used. A buffer
/// shorter than `capacity` is padded at the old end by repeating its oldest
/// sample.
pub fn build_observation<R: Rng + ?Sized>(
    buffer: &VecDeque<JointSample>,
    capacity: usize,
    x_d: f64,
    norm: &Normalization,
    rng: &mut R,
    delay_prob: f64,
) -> Observation {
    assert!(!buffer.is_empty(), "observation needs at least one sample");
    let capacity = capacity.max(STACK);
    let pad = capacity.saturating_sub(buffer.len());
    let at = |i: usize| -> &JointSample {
        if i < pad {
            &buffer[0]
        } else {
            &buffer[i - pad]
        }
    };
    let delayed = delay_prob > 0.0 && rng.random_bool(delay_prob.min(1.0));
    let chosen: Vec<usize> = if delayed {
        sample_delay_indices(rng, capacity, STACK)
    } else {
        (capacity - STACK..capacity).collect()
    };
    let mut obs = [0.0; OBS_DIM];
    for (block, &i) in chosen.iter().rev().enumerate() {
        obs[block * 5..block * 5 + 5].copy_from_slice(&norm.block(at(i), x_d));
    }
    obs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Commanded heights; one is drawn per episode unless given at reset.
    pub heights: Vec<f64>,
    /// Episode length, s.
    pub episode_length: f64,
    pub control_rate: f64,
    pub substeps: usize,
    pub delay_prob: f64,
    pub buffer_len: usize,
    pub lambda_joint: f64,
    pub lambda_torque: f64,
    /// Foot retraction of the standing pose, fraction of leg length.
    pub standing_retraction: f64,
    pub height_scale: f64,
    /// Joint PD that pushes joints back inside their limits.
    pub safety_kp: f64,
    pub safety_kd: f64,
    /// Allow desired-height changes within an episode.
    pub evaluation: bool,
    pub weights: RewardWeights,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            heights: vec![0.25, 0.30, 0.35],
            episode_length: 10.0,
            control_rate: 200.0,
            substeps: 5,
            delay_prob: 0.5,
            buffer_len: 10,
            lambda_joint: 0.05,
            lambda_torque: 0.15,
            standing_retraction: 0.3,
            height_scale: 0.35,
            safety_kp: 20.0,
            safety_kd: 0.5,
            evaluation: false,
            weights: RewardWeights::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::InvalidConfig(m.to_owned()));
        if self.heights.is_empty() || self.heights.iter().any(|h| !h.is_finite()) {
            return bad("heights must be a non-empty list of finite values");
        }
        if !(0.0..=1.0).contains(&self.delay_prob) {
            return bad("delay_prob must lie in [0, 1]");
        }
        if !(self.lambda_joint >= 0.0 && self.lambda_torque >= 0.0) {
            return bad("noise ranges must be non-negative");
        }
        if self.buffer_len < STACK {
            return bad("buffer_len must be at least 3");
        }
        if !(self.control_rate > 0.0 && self.episode_length > 0.0 && self.substeps >= 1) {
            return bad("control_rate, episode_length and substeps must be positive");
        }
        if !(self.height_scale > 0.0) {
            return bad("height_scale must be positive");
        }
        if !(0.0..1.0).contains(&self.standing_retraction) {
            return bad("standing_retraction must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn episode_steps(&self) -> usize {
        (self.episode_length * self.control_rate).round() as usize
    }
}

/// Logging-only quantities, never part of the observation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub t: f64,
    pub base_height: f64,
    pub contact: bool,
    pub torques: [f64; 2],
    pub safety: [bool; 2],
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub observation: Observation,
    pub reward: RewardBreakdown,
    pub terminated: bool,
    pub info: StepInfo,
}

pub struct Env {
    model: RobotModel,
    sim: Simulator,
    config: EnvConfig,
    norm: Normalization,
    rng: ChaCha8Rng,
    state: SimState,
    history: VecDeque<JointSample>,
    prev_action: [f64; 2],
    x_d: f64,
    x_o: f64,
    steps: usize,
    started: bool,
    terminated: bool,
}

impl Env {
    pub fn new(model: RobotModel, params: SimParams, config: EnvConfig) -> Result<Self, EnvError> {
        config.validate()?;
        model.validate().map_err(|e| EnvError::InvalidConfig(e.to_string()))?;
        params.validate().map_err(|e| EnvError::InvalidConfig(e.to_string()))?;
        let norm = Normalization::new(&model, config.height_scale);
        let sim = Simulator::new(model.clone(), params);
        Ok(Self {
            model,
            sim,
            norm,
            rng: ChaCha8Rng::seed_from_u64(0),
            state: SimState::at_rest(Configuration::default()),
            history: VecDeque::with_capacity(config.buffer_len),
            config,
            prev_action: [0.0; 2],
            x_d: 0.0,
            x_o: 0.0,
            steps: 0,
            started: false,
            terminated: false,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    pub fn desired_height(&self) -> f64 {
        self.x_d
    }

    pub fn standing_height(&self) -> f64 {
        self.x_o
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    /// Starts an episode from the standing pose. `height` overrides the
    /// randomly drawn command.
    pub fn reset(&mut self, seed: u64, height: Option<f64>) -> Observation {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.x_d = match height {
            Some(h) => h,
            None => {
                let i = self.rng.random_range(0..self.config.heights.len());
                self.config.heights[i]
            }
        };
        let pose = retracted_pose(&self.model, self.config.standing_retraction);
        let x0 = self.model.standing_height(pose[0], pose[1]);
        self.state = SimState::at_rest(Configuration::new(x0, pose[0], pose[1]));
        self.x_o = x0;
        self.prev_action = [0.0; 2];
        self.steps = 0;
        self.started = true;
        self.terminated = false;
        self.history.clear();
        let sample = self.read_joints();
        self.history.push_back(sample);
        self.observe()
    }

    pub fn set_desired_height(&mut self, height: f64) -> Result<(), EnvError> {
        if !self.config.evaluation {
            return Err(EnvError::CommandLocked);
        }
        self.x_d = height;
        Ok(())
    }

    pub fn step(&mut self, action: [f64; 2]) -> Result<EnvStep, EnvError> {
        if !self.started {
            return Err(EnvError::NotReset);
        }
        if self.terminated {
            return Err(EnvError::Terminated);
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(EnvError::InvalidAction(format!("{action:?} is not finite")));
        }
        let action = [action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0)];
        let limits = self.model.joint_torque_limits();
        let mut tau = [0.0; 2];
        for i in 0..2 {
            tau[i] = apply_noise(action[i] * limits[i], self.config.lambda_torque, &mut self.rng);
        }
        let mut safety = [false; 2];
        for i in 0..2 {
            let q = self.state.q[i + 1];
            let qd = self.state.qd[i + 1];
            let bound = if q < self.model.q_low[i] {
                Some(self.model.q_low[i])
            } else if q > self.model.q_high[i] {
                Some(self.model.q_high[i])
            } else {
                None
            };
            if let Some(b) = bound {
                safety[i] = true;
                tau[i] = self.config.safety_kp * (b - q) - self.config.safety_kd * qd;
            }
        }
        let tau = self.sim.clamp_torques(tau);

        let dt = 1.0 / (self.config.control_rate * self.config.substeps as f64);
        let mut diverged = false;
        for _ in 0..self.config.substeps {
            match self.sim.step(&self.state, tau, dt) {
                Ok(next) => self.state = next,
                Err(_) => {
                    diverged = true;
                    break;
                }
            }
        }

        let s = &self.state;
        let q = [s.q[1], s.q[2]];
        let qd = [s.qd[1], s.qd[2]];
        let reward = total_reward(
            reward_energy(s.q[0], s.qd[0], self.x_o),
            reward_height_barrier(s.q[0], self.x_d),
            reward_jerk(action, self.prev_action),
            reward_joint_position(q, self.model.q_low, self.model.q_high),
            reward_joint_velocity(qd, self.model.qd_max),
            &self.config.weights,
        );
        let info = StepInfo {
            t: s.t,
            base_height: s.q[0],
            contact: s.in_contact,
            torques: tau,
            safety,
            diverged,
        };
        self.prev_action = action;
        self.steps += 1;
        self.terminated = diverged || self.steps >= self.config.episode_steps();

        let sample = self.read_joints();
        if self.history.len() == self.config.buffer_len {
            self.history.pop_front();
        }
        self.history.push_back(sample);
        Ok(EnvStep {
            observation: self.observe(),
            reward,
            terminated: self.terminated,
            info,
        })
    }

    fn read_joints(&mut self) -> JointSample {
        let s = &self.state;
        let lam = self.config.lambda_joint;
        let rng = &mut self.rng;
        let q = [apply_noise(s.q[1], lam, rng), apply_noise(s.q[2], lam, rng)];
        let qd = [apply_noise(s.qd[1], lam, rng), apply_noise(s.qd[2], lam, rng)];
        JointSample { q, qd }
    }

    fn observe(&mut self) -> Observation {
        build_observation(
            &self.history,
            self.config.buffer_len,
            self.x_d,
            &self.norm,
            &mut self.rng,
            self.config.delay_prob,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_examples() {
        assert_eq!(reward_energy(0.2, 0.0, 0.2), 0.0);
        assert!((reward_energy(0.3, 1.0, 0.2) - 1.01).abs() < 1e-15);
        assert_eq!(reward_height_barrier(0.2, 0.3), 0.0);
        assert_eq!(reward_height_barrier(0.3, 0.3), 0.0);
        assert!((reward_height_barrier(0.4, 0.3) - 0.10517091807564771).abs() < 1e-15);
        assert_eq!(reward_jerk([0.3, 0.1], [0.3, 0.1]), 0.0);
        assert!((reward_jerk([0.1, -0.2], [0.0, 0.0]) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn joint_barriers() {
        let lo = [-1.0, -1.0];
        let hi = [1.0, 1.0];
        let centered = reward_joint_position([0.0, 0.0], lo, hi);
        assert!((centered - 4.0 * (-10.0f64).exp()).abs() < 1e-18);
        let at_limit = reward_joint_position([1.0, 0.0], lo, hi) - 2.0 * (-10.0f64).exp();
        assert!((at_limit - (1.0 + (-20.0f64).exp())).abs() < 1e-15);
        assert_eq!(reward_joint_position([1.5, 3.0], lo, hi), 2.0);
        assert_eq!(reward_joint_velocity([25.0, -25.0], [25.0, 25.0]), 0.0);
        assert_eq!(reward_joint_velocity([50.0, 0.0], [25.0, 25.0]), 3.0 * 625.0);
        assert_eq!(reward_joint_velocity([-50.0, 0.0], [25.0, 25.0]), 3.0 * 625.0);
    }

    #[test]
    fn weighted_total() {
        let w = RewardWeights::default();
        assert_eq!(total_reward(0.0, 0.0, 0.0, 0.0, 0.0, &w).total, 0.0);
        assert_eq!(total_reward(1.0, 0.0, 0.0, 0.0, 0.0, &w).total, 0.5);
        assert_eq!(total_reward(0.0, 1.0, 0.0, 0.0, 0.0, &w).total, -2.0);
    }

    #[test]
    fn noise_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(apply_noise(3.0, 0.0, &mut rng), 3.0);
        assert_eq!(apply_noise(0.0, 0.5, &mut rng), 0.0);
        for _ in 0..1000 {
            let v = apply_noise(2.0, 0.1, &mut rng);
            assert!((1.8..=2.2).contains(&v));
        }
    }

    #[test]
    fn observation_without_delay_uses_latest() {
        let model = RobotModel::default();
        let norm = Normalization::new(&model, 0.35);
        let buf: VecDeque<JointSample> = (0..10)
            .map(|i| JointSample {
                q: [0.0, 0.0],
                qd: [i as f64, 0.0],
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let obs = build_observation(&buf, 10, 0.35, &norm, &mut rng, 0.0);
        assert_eq!(obs[2], 9.0 / 25.0);
        assert_eq!(obs[7], 8.0 / 25.0);
        assert_eq!(obs[12], 7.0 / 25.0);
        assert_eq!(obs[4], 1.0);
    }

    #[test]
    fn short_buffer_pads_with_oldest() {
        let model = RobotModel::default();
        let norm = Normalization::new(&model, 0.35);
        let buf: VecDeque<JointSample> = [JointSample {
            q: [0.0, 1.3],
            qd: [5.0, 0.0],
        }]
        .into_iter()
        .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let obs = build_observation(&buf, 10, 0.3, &norm, &mut rng, 1.0);
        assert_eq!(&obs[0..5], &obs[5..10]);
        assert_eq!(&obs[0..5], &obs[10..15]);
    }

    #[test]
    fn step_requires_reset_and_stops_at_timeout() {
        let config = EnvConfig {
            episode_length: 0.02,
            ..EnvConfig::default()
        };
        let mut env = Env::new(RobotModel::default(), SimParams::default(), config).unwrap();
        assert_eq!(env.step([0.0, 0.0]), Err(EnvError::NotReset));
        env.reset(3, Some(0.3));
        let mut last = None;
        for _ in 0..4 {
            last = Some(env.step([0.0, 0.0]).unwrap());
        }
        assert!(last.unwrap().terminated);
        assert_eq!(env.step([0.0, 0.0]), Err(EnvError::Terminated));
        assert_eq!(env.set_desired_height(0.25), Err(EnvError::CommandLocked));
    }
}
