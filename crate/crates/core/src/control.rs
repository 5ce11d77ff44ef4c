//! Energy-shaping hopping controller.
//!
//! A three-phase state machine: during lift-off a Cartesian stiffness law
//! pushes the foot into the ground with an adaptively scaled feed-forward
//! force; during flight the joints are servoed to a retracted pose; during
//! touchdown soft, heavily damped joint PD absorbs the landing.

use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{end_effector_jacobian, inverse_kinematics, Configuration, RobotModel};
use crate::sim::SimState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("degenerate lift-off stroke {0} m (must be positive)")]
    DegenerateStroke(f64),
    #[error("invalid previous-jump energy {0} J (must be positive)")]
    InvalidEnergy(f64),
}

/// Shortest lift-off stroke used when the touchdown minimum is at or above
/// the extended standing height.
pub const MIN_STROKE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    LiftOff,
    Flight,
    Touchdown,
}

impl Phase {
    pub fn next(self) -> Phase {
        match self {
            Phase::LiftOff => Phase::Flight,
            Phase::Flight => Phase::Touchdown,
            Phase::Touchdown => Phase::LiftOff,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::LiftOff => "liftoff",
            Phase::Flight => "flight",
            Phase::Touchdown => "touchdown",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EsGains {
    /// Initial energy-shaping gain.
    pub k0: f64,
    /// Cartesian lateral stiffness, N/m.
    pub kp_y: f64,
    /// Cartesian lateral damping, N s/m.
    pub kd_y: f64,
    /// Joint targets (hip, knee) held during flight and touchdown.
    pub flight_pose: [f64; 2],
    pub flight_kp: f64,
    pub flight_kd: f64,
    pub touchdown_kp: f64,
    pub touchdown_kd: f64,
    /// Normal force above which the foot counts as in contact, N.
    pub contact_threshold: f64,
    pub apex_feedback: ApexFeedback,
}

/// Source of the previous-jump apex used by the gain update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApexFeedback {
    /// Ballistic prediction from the lift-off snapshot, applied at lift-off.
    Estimated,
    /// Highest base height observed during flight, applied at touchdown.
    Measured,
}

impl EsGains {
    /// Default gains with the flight pose retracting the foot by 15% of the
    /// leg length, straight below the carriage. Touchdown uses the same pose
    /// with a stiffer spring so the leg does not fold on landing.
    pub fn for_model(model: &RobotModel) -> Self {
        Self {
            k0: 1.0,
            kp_y: 10.0,
            kd_y: 3.0,
            flight_pose: retracted_pose(model, 0.15),
            flight_kp: 6.0,
            flight_kd: 0.15,
            touchdown_kp: 20.0,
            touchdown_kd: 1.0,
            contact_threshold: 1.0,
            apex_feedback: ApexFeedback::Measured,
        }
    }
}

/// Joint angles that hold the foot below the carriage, shortened by
/// `retraction` times the leg length.
pub fn retracted_pose(model: &RobotModel, retraction: f64) -> [f64; 2] {
    let depth = model.leg_length() * (1.0 - retraction);
    let cfg = inverse_kinematics(model, 0.0, Vector2::new(-depth, 0.0))
        .expect("retracted foot lies inside the workspace");
    [cfg.q_hip, cfg.q_knee]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub phase: Phase,
    /// Energy-shaping gain.
    pub k: f64,
    /// Running minimum base height since the last touchdown, m.
    pub x0_j: f64,
    pub x_liftoff: f64,
    pub xd_liftoff: f64,
    pub t_liftoff: f64,
    /// Estimated apex of the most recent jump, once one exists.
    pub x_peak_prev: Option<f64>,
    /// Commanded apex height, m.
    pub x_desired: f64,
    /// Feed-forward ground force of the current lift-off, N.
    pub f_ff: f64,
    /// Completed lift-offs.
    pub jumps: usize,
    /// Highest base height seen in the current flight.
    pub flight_max: f64,
}

impl ControllerState {
    /// A controller that starts by absorbing motion in touchdown, as when the
    /// leg is placed on the ground.
    pub fn new(x_desired: f64, gains: &EsGains, base_height: f64) -> Self {
        Self {
            phase: Phase::Touchdown,
            k: gains.k0,
            x0_j: base_height,
            x_liftoff: 0.0,
            xd_liftoff: 0.0,
            t_liftoff: 0.0,
            x_peak_prev: None,
            x_desired,
            f_ff: 0.0,
            jumps: 0,
            flight_max: base_height,
        }
    }
}

impl ControllerState {
    fn apply_apex(&mut self, apex: f64, model: &RobotModel) {
        let g_mag = model.gravity.abs();
        let e_desired = desired_energy(model.m_total, g_mag, self.x_desired);
        let e_prev = desired_energy(model.m_total, g_mag, apex);
        if let Ok(k) = update_gain(self.k, e_desired, e_prev) {
            self.k = k;
        }
        self.x_peak_prev = Some(apex);
    }
}

/// Proprioceptive input of one controller tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EsObservation {
    pub cfg: Configuration,
    pub qd: Vector3<f64>,
    pub contact: bool,
    pub t: f64,
}

/// Energy needed to reach apex height `x_d`.
pub fn desired_energy(m: f64, g_mag: f64, x_d: f64) -> f64 {
    m * g_mag * x_d
}

/// Constant ground force that lifts the point mass from `x0_j` to `x_d` over
/// a stroke of `dx_liftoff`.
pub fn feedforward_force(
    m: f64,
    g_mag: f64,
    x_d: f64,
    x0_j: f64,
    dx_liftoff: f64,
) -> Result<f64, ControlError> {
    if !(dx_liftoff > 0.0) {
        return Err(ControlError::DegenerateStroke(dx_liftoff));
    }
    Ok(m * g_mag * (x_d - x0_j) / dx_liftoff)
}

pub fn update_gain(k_prev: f64, e_desired: f64, e_prev: f64) -> Result<f64, ControlError> {
    if !(e_prev > 0.0) {
        return Err(ControlError::InvalidEnergy(e_prev));
    }
    let ratio = e_desired / e_prev;
    Ok(k_prev * ratio * ratio)
}

/// Cartesian stiffness law: the feed-forward force pushes the foot into the
/// ground (along `-x`), lateral PD keeps the foot under the carriage.
pub fn stiffness_torques(
    model: &RobotModel,
    cfg: &Configuration,
    qd: &Vector3<f64>,
    k: f64,
    f_ff: f64,
    gains: &EsGains,
) -> [f64; 2] {
    let jac = end_effector_jacobian(model, cfg);
    let y = model.foot_offset(cfg.q_hip, cfg.q_knee).y;
    let y_rate = (jac * Vector2::new(qd[1], qd[2])).y;
    let force = Vector2::new(-k * f_ff, -gains.kp_y * y - gains.kd_y * y_rate);
    let tau = jac.transpose() * force;
    [tau.x, tau.y]
}

/// Ballistic base height during flight from the lift-off snapshot.
pub fn flight_height(t: f64, t_l: f64, x_l: f64, xd_l: f64, g: f64) -> f64 {
    0.5 * g * (t * t - t_l * t_l) - g * t_l * (t - t_l) + xd_l * (t - t_l) + x_l
}

/// Apex of the ballistic arc that starts at the lift-off snapshot.
pub fn ballistic_apex(t_l: f64, x_l: f64, xd_l: f64, g: f64) -> f64 {
    let rise = if g < 0.0 { (xd_l / -g).max(0.0) } else { 0.0 };
    flight_height(t_l + rise, t_l, x_l, xd_l, g)
}

pub fn pd_torques(q_target: [f64; 2], q: [f64; 2], qd: [f64; 2], kp: f64, kd: f64) -> [f64; 2] {
    [
        kp * (q_target[0] - q[0]) - kd * qd[0],
        kp * (q_target[1] - q[1]) - kd * qd[1],
    ]
}

/// One tick of the state machine. Transitions take effect immediately and the
/// returned torques belong to the new phase.
pub fn fsm_step(
    ctrl: &ControllerState,
    obs: &EsObservation,
    model: &RobotModel,
    gains: &EsGains,
) -> ([f64; 2], ControllerState) {
    let mut next = ctrl.clone();
    let g_mag = model.gravity.abs();
    let x = obs.cfg.x;
    let xd = obs.qd[0];
    let joints = obs.cfg.joints();
    let joint_rates = [obs.qd[1], obs.qd[2]];

    match ctrl.phase {
        Phase::Touchdown => {
            next.x0_j = next.x0_j.min(x);
            if xd >= 0.0 {
                next.phase = Phase::LiftOff;
                let stroke = (model.leg_length() - next.x0_j).max(MIN_STROKE);
                next.f_ff = feedforward_force(model.m_total, g_mag, next.x_desired, next.x0_j, stroke)
                    .expect("stroke is clamped positive");
            }
        }
        Phase::LiftOff => {
            if !obs.contact {
                next.phase = Phase::Flight;
                next.x_liftoff = x;
                next.xd_liftoff = xd;
                next.t_liftoff = obs.t;
                next.jumps += 1;
                next.flight_max = x;
                if gains.apex_feedback == ApexFeedback::Estimated {
                    let apex = ballistic_apex(obs.t, x, xd, model.gravity);
                    next.apply_apex(apex, model);
                }
            }
        }
        Phase::Flight => {
            next.flight_max = next.flight_max.max(x);
            if obs.contact {
                next.phase = Phase::Touchdown;
                next.x0_j = x;
                if gains.apex_feedback == ApexFeedback::Measured {
                    let apex = next.flight_max;
                    next.apply_apex(apex, model);
                }
            }
        }
    }

    let tau = match next.phase {
        Phase::LiftOff => stiffness_torques(model, &obs.cfg, &obs.qd, next.k, next.f_ff, gains),
        Phase::Flight => pd_torques(gains.flight_pose, joints, joint_rates, gains.flight_kp, gains.flight_kd),
        Phase::Touchdown => pd_torques(
            gains.flight_pose,
            joints,
            joint_rates,
            gains.touchdown_kp,
            gains.touchdown_kd,
        ),
    };
    (tau, next)
}

/// Stateful wrapper that feeds simulator states through the state machine
/// using a thresholded contact signal.
#[derive(Debug, Clone)]
pub struct EsController {
    pub model: RobotModel,
    pub gains: EsGains,
    pub state: ControllerState,
}

impl EsController {
    pub fn new(model: RobotModel, gains: EsGains, x_desired: f64, initial: &SimState) -> Self {
        let state = ControllerState::new(x_desired, &gains, initial.base_height());
        Self { model, gains, state }
    }

    pub fn set_desired_height(&mut self, x_desired: f64) {
        self.state.x_desired = x_desired;
    }

    pub fn phase(&self) -> Phase {
        self.state.phase
    }

    pub fn control(&mut self, sim_state: &SimState) -> [f64; 2] {
        let obs = EsObservation {
            cfg: sim_state.configuration(),
            qd: sim_state.qd,
            contact: sim_state.f_normal > self.gains.contact_threshold,
            t: sim_state.t,
        };
        let (tau, next) = fsm_step(&self.state, &obs, &self.model, &self.gains);
        self.state = next;
        tau
    }
}
