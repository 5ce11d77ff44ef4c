//! Fixed-step forward dynamics of the rail carriage and the two-link leg.
//!
//! Generalized coordinates are `(x, q_hip, q_knee)`. The carriage slides on a
//! passive vertical rail; hip and knee are torque driven. The foot is a point
//! touching a compliant ground plane at `x = 0`.

use nalgebra::{Matrix2x3, Matrix3, RowVector3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::log::{LogRow, TrajectoryLog};
use crate::model::{forward_kinematics, Configuration, RobotModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("integration diverged: {quantity} is not finite at t = {t:.6} s")]
    Diverged { quantity: String, t: f64 },
    #[error("invalid simulation input: {0}")]
    InvalidInput(String),
}

/// Identifiable joint, inertia and contact-solver parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    /// Rail Coulomb friction, N.
    pub rail_frictionloss: f64,
    /// Rail viscous damping, N s/m.
    pub rail_damping: f64,
    pub hip_frictionloss: f64,
    pub knee_frictionloss: f64,
    pub hip_damping: f64,
    pub knee_damping: f64,
    /// Reflected rotor inertia on the hip, kg m^2.
    pub hip_armature: f64,
    /// Reflected rotor inertia on the knee (joint side), kg m^2.
    pub knee_armature: f64,
    pub iz1: f64,
    pub iz2: f64,
    /// Contact time constant, s. Smaller is stiffer.
    pub contact_time_constant: f64,
    pub contact_damping_ratio: f64,
}

impl Default for SimParams {
    /// The fitted values reported for the physical leg.
    fn default() -> Self {
        Self {
            rail_frictionloss: 0.7024,
            rail_damping: 1.0724,
            hip_frictionloss: 0.4364,
            knee_frictionloss: 0.0015,
            hip_damping: 0.0005,
            knee_damping: 0.1441,
            hip_armature: 0.00004,
            knee_armature: 0.0001,
            iz1: 0.004061,
            iz2: 0.000845,
            contact_time_constant: 0.0911,
            contact_damping_ratio: 0.6678,
        }
    }
}

impl SimParams {
    /// Parameters with every dissipative term set to zero.
    pub fn frictionless(&self) -> Self {
        Self {
            rail_frictionloss: 0.0,
            rail_damping: 0.0,
            hip_frictionloss: 0.0,
            knee_frictionloss: 0.0,
            hip_damping: 0.0,
            knee_damping: 0.0,
            ..self.clone()
        }
    }

    /// Idealized joints and a stiff ground, used for energy-shaping trials.
    pub fn hopping_trial() -> Self {
        Self {
            contact_time_constant: 0.02,
            ..Self::default().frictionless()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let nonneg = [
            ("rail_frictionloss", self.rail_frictionloss),
            ("rail_damping", self.rail_damping),
            ("hip_frictionloss", self.hip_frictionloss),
            ("knee_frictionloss", self.knee_frictionloss),
            ("hip_damping", self.hip_damping),
            ("knee_damping", self.knee_damping),
            ("hip_armature", self.hip_armature),
            ("knee_armature", self.knee_armature),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SimError::InvalidInput(format!("{name} must be >= 0, got {v}")));
            }
        }
        let positive = [
            ("iz1", self.iz1),
            ("iz2", self.iz2),
            ("contact_time_constant", self.contact_time_constant),
            ("contact_damping_ratio", self.contact_damping_ratio),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::InvalidInput(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    fn frictionloss(&self) -> Vector3<f64> {
        Vector3::new(self.rail_frictionloss, self.hip_frictionloss, self.knee_frictionloss)
    }

    fn damping(&self) -> Vector3<f64> {
        Vector3::new(self.rail_damping, self.hip_damping, self.knee_damping)
    }

    /// Contact stiffness (N/m) and damping (N s/m) for a supported mass.
    pub fn contact_gains(&self, mass: f64) -> (f64, f64) {
        let tc = self.contact_time_constant;
        let zeta = self.contact_damping_ratio;
        (mass / (tc * tc * zeta * zeta), 2.0 * mass / tc)
    }
}

/// Solver constants that are not identified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    /// Horizontal viscous foot friction coefficient `mu_t`, s/m.
    pub lateral_viscosity: f64,
    /// Velocity scale of the tanh-smoothed Coulomb friction, m/s or rad/s.
    pub friction_velocity_eps: f64,
    /// Lock the rail joint (suspended, fixed-base configuration).
    pub base_locked: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            lateral_viscosity: 1.0,
            friction_velocity_eps: 1e-3,
            base_locked: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    /// `(x, q_hip, q_knee)`.
    pub q: Vector3<f64>,
    pub qd: Vector3<f64>,
    pub t: f64,
    pub in_contact: bool,
    /// Normal force applied during the last step, N.
    pub f_normal: f64,
}

impl SimState {
    pub fn at_rest(cfg: Configuration) -> Self {
        Self {
            q: Vector3::new(cfg.x, cfg.q_hip, cfg.q_knee),
            qd: Vector3::zeros(),
            t: 0.0,
            in_contact: false,
            f_normal: 0.0,
        }
    }

    pub fn configuration(&self) -> Configuration {
        Configuration::new(self.q[0], self.q[1], self.q[2])
    }

    pub fn base_height(&self) -> f64 {
        self.q[0]
    }

    pub fn base_velocity(&self) -> f64 {
        self.qd[0]
    }
}

/// Per-body kinematic terms: linear Jacobian, angular Jacobian and the
/// velocity-product acceleration `Jdot * qd`.
struct BodyTerms {
    mass: f64,
    inertia: f64,
    jv: Matrix2x3<f64>,
    jw: RowVector3<f64>,
    bias_acc: Vector2<f64>,
    height: f64,
}

/// Kinematics of a point at distance `r2` along the lower link (or along the
/// upper link when `r2` is `None`, at distance `r1`).
fn point_terms(
    model: &RobotModel,
    q: &Vector3<f64>,
    qd: &Vector3<f64>,
    r1: f64,
    r2: Option<f64>,
) -> (Vector2<f64>, Matrix2x3<f64>, Vector2<f64>) {
    let (s1, c1) = q[1].sin_cos();
    let w1 = qd[1];
    match r2 {
        None => {
            let pos = Vector2::new(q[0] - r1 * c1, -r1 * s1);
            let jv = Matrix2x3::new(1.0, r1 * s1, 0.0, 0.0, -r1 * c1, 0.0);
            let acc = Vector2::new(r1 * c1 * w1 * w1, r1 * s1 * w1 * w1);
            (pos, jv, acc)
        }
        Some(r2) => {
            let l1 = model.l1;
            let (s12, c12) = (q[1] + q[2]).sin_cos();
            let w12 = qd[1] + qd[2];
            let pos = Vector2::new(q[0] - l1 * c1 - r2 * c12, -l1 * s1 - r2 * s12);
            let jv = Matrix2x3::new(
                1.0,
                l1 * s1 + r2 * s12,
                r2 * s12,
                0.0,
                -l1 * c1 - r2 * c12,
                -r2 * c12,
            );
            let acc = Vector2::new(
                l1 * c1 * w1 * w1 + r2 * c12 * w12 * w12,
                l1 * s1 * w1 * w1 + r2 * s12 * w12 * w12,
            );
            (pos, jv, acc)
        }
    }
}

fn bodies(
    model: &RobotModel,
    params: &SimParams,
    q: &Vector3<f64>,
    qd: &Vector3<f64>,
) -> [BodyTerms; 3] {
    let base = BodyTerms {
        mass: model.m_base,
        inertia: 0.0,
        jv: Matrix2x3::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0),
        jw: RowVector3::zeros(),
        bias_acc: Vector2::zeros(),
        height: q[0],
    };
    let (p1, jv1, a1) = point_terms(model, q, qd, model.com1, None);
    let (p2, jv2, a2) = point_terms(model, q, qd, 0.0, Some(model.com2));
    [
        base,
        BodyTerms {
            mass: model.m1,
            inertia: params.iz1,
            jv: jv1,
            jw: RowVector3::new(0.0, 1.0, 0.0),
            bias_acc: a1,
            height: p1.x,
        },
        BodyTerms {
            mass: model.m2,
            inertia: params.iz2,
            jv: jv2,
            jw: RowVector3::new(0.0, 1.0, 1.0),
            bias_acc: a2,
            height: p2.x,
        },
    ]
}

/// Joint-space mass matrix, including the joint armatures.
pub fn mass_matrix(model: &RobotModel, params: &SimParams, cfg: &Configuration) -> Matrix3<f64> {
    let q = Vector3::new(cfg.x, cfg.q_hip, cfg.q_knee);
    mass_matrix_at(model, params, &q)
}

fn mass_matrix_at(model: &RobotModel, params: &SimParams, q: &Vector3<f64>) -> Matrix3<f64> {
    let mut m = Matrix3::zeros();
    for b in bodies(model, params, q, &Vector3::zeros()) {
        m += b.mass * b.jv.transpose() * b.jv + b.inertia * b.jw.transpose() * b.jw;
    }
    m[(1, 1)] += params.hip_armature;
    m[(2, 2)] += params.knee_armature;
    (m + m.transpose()) * 0.5
}

/// Foot position and its 2x3 Jacobian with respect to all generalized coordinates.
pub fn foot_jacobian(model: &RobotModel, q: &Vector3<f64>) -> (Vector2<f64>, Matrix2x3<f64>) {
    let (pos, jv, _) = point_terms(model, q, &Vector3::zeros(), 0.0, Some(model.l2));
    (pos, jv)
}

/// Normal force of the compliant ground at the current state, N.
pub fn contact_force(state: &SimState, model: &RobotModel, params: &SimParams) -> f64 {
    let (foot, jf) = foot_jacobian(model, &state.q);
    let depth = (-foot.x).max(0.0);
    if depth <= 0.0 {
        return 0.0;
    }
    let depth_rate = -(jf.row(0) * state.qd)[0];
    let (k, b) = params.contact_gains(model.m_total);
    (k * depth + b * depth_rate).max(0.0)
}

/// Generalized friction force `f_fric` opposing `qd` (smoothed Coulomb plus viscous).
pub fn friction_forces(params: &SimParams, qd: &Vector3<f64>, velocity_eps: f64) -> Vector3<f64> {
    let fl = params.frictionloss();
    let d = params.damping();
    Vector3::from_fn(|i, _| d[i] * qd[i] + fl[i] * (qd[i] / velocity_eps).tanh())
}

/// Kinetic plus gravitational potential energy (ground at `x = 0`).
pub fn mechanical_energy(model: &RobotModel, params: &SimParams, state: &SimState) -> f64 {
    let m = mass_matrix_at(model, params, &state.q);
    let kinetic = 0.5 * (state.qd.transpose() * m * state.qd)[0];
    let potential: f64 = bodies(model, params, &state.q, &state.qd)
        .iter()
        .map(|b| -b.mass * model.gravity * b.height)
        .sum();
    kinetic + potential
}

/// A simulator instance: model, identified parameters and solver options.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub model: RobotModel,
    pub params: SimParams,
    pub options: SimOptions,
}

impl Simulator {
    pub fn new(model: RobotModel, params: SimParams) -> Self {
        Self {
            model,
            params,
            options: SimOptions::default(),
        }
    }

    pub fn with_options(mut self, options: SimOptions) -> Self {
        self.options = options;
        self
    }

    pub fn mass_matrix(&self, cfg: &Configuration) -> Matrix3<f64> {
        mass_matrix(&self.model, &self.params, cfg)
    }

    pub fn contact_force(&self, state: &SimState) -> f64 {
        contact_force(state, &self.model, &self.params)
    }

    pub fn energy(&self, state: &SimState) -> f64 {
        mechanical_energy(&self.model, &self.params, state)
    }

    pub fn foot_position(&self, state: &SimState) -> Vector2<f64> {
        forward_kinematics(&self.model, &state.configuration())
    }

    /// Clamp commanded joint torques to the transmission-scaled limits.
    pub fn clamp_torques(&self, tau: [f64; 2]) -> [f64; 2] {
        let lim = self.model.joint_torque_limits();
        [tau[0].clamp(-lim[0], lim[0]), tau[1].clamp(-lim[1], lim[1])]
    }

    /// Advance one physics step with semi-implicit Euler.
    ///
    /// Viscous damping, smoothed Coulomb friction and the contact spring-damper
    /// are treated linearly implicitly in the new velocity; all other forces are
    /// evaluated at the current state. Positions are updated with the new
    /// velocity.
    pub fn step(&self, state: &SimState, tau: [f64; 2], dt: f64) -> Result<SimState, SimError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SimError::InvalidInput(format!("dt must be positive, got {dt}")));
        }
        let tau = self.clamp_torques(tau);
        let model = &self.model;
        let params = &self.params;
        let q = state.q;
        let v = state.qd;

        let mut mass = Matrix3::zeros();
        let mut forces = Vector3::new(0.0, tau[0], tau[1]);
        for b in bodies(model, params, &q, &v) {
            let jt = b.jv.transpose();
            mass += b.mass * jt * b.jv + b.inertia * b.jw.transpose() * b.jw;
            forces += b.mass * jt * (Vector2::new(model.gravity, 0.0) - b.bias_acc);
        }
        mass[(1, 1)] += params.hip_armature;
        mass[(2, 2)] += params.knee_armature;

        // Secant coefficients keep the applied friction exactly dissipative.
        let eps = self.options.friction_velocity_eps;
        let fl = params.frictionloss();
        let damping = params.damping();
        let friction_coeff = Matrix3::from_diagonal(&Vector3::from_fn(|i, _| {
            let s = v[i].abs();
            let coulomb = if s > 1e-12 * eps {
                fl[i] * (s / eps).tanh() / s
            } else {
                fl[i] / eps
            };
            damping[i] + coulomb
        }));

        let base_matrix = mass + dt * friction_coeff;
        let base_rhs = mass * v + dt * forces;

        let (foot, jf) = foot_jacobian(model, &q);
        let depth = (-foot.x).max(0.0);
        let mut solution = None;
        if depth > 0.0 {
            let (k, b) = params.contact_gains(model.m_total);
            let n = jf.row(0).into_owned();
            let t_row = jf.row(1).into_owned();
            let explicit_fn = (k * depth - b * (n * v)[0]).max(0.0);
            let normal_coeff = b + dt * k;
            let lateral_coeff = self.options.lateral_viscosity * explicit_fn;
            let a = base_matrix
                + dt * normal_coeff * n.transpose() * n
                + dt * lateral_coeff * t_row.transpose() * t_row;
            let rhs = base_rhs + dt * n.transpose() * (k * depth);
            let v_new = self.solve(a, rhs);
            let f_n = k * depth - normal_coeff * (n * v_new)[0];
            if f_n > 0.0 {
                solution = Some((v_new, f_n));
            }
        }
        let (v_new, f_n) = match solution {
            Some(s) => s,
            None => (self.solve(base_matrix, base_rhs), 0.0),
        };
        let q_new = q + dt * v_new;

        let t = state.t + dt;
        for i in 0..3 {
            if !q_new[i].is_finite() {
                return Err(SimError::Diverged {
                    quantity: format!("q[{i}]"),
                    t,
                });
            }
            if !v_new[i].is_finite() {
                return Err(SimError::Diverged {
                    quantity: format!("qd[{i}]"),
                    t,
                });
            }
        }
        Ok(SimState {
            q: q_new,
            qd: v_new,
            t,
            in_contact: f_n > 0.0,
            f_normal: f_n,
        })
    }

    fn solve(&self, mut a: Matrix3<f64>, mut rhs: Vector3<f64>) -> Vector3<f64> {
        if self.options.base_locked {
            for i in 0..3 {
                a[(0, i)] = 0.0;
                a[(i, 0)] = 0.0;
            }
            a[(0, 0)] = 1.0;
            rhs[0] = 0.0;
        }
        // The system matrix is SPD; a failed factorization only happens on
        // non-finite input and surfaces as a divergence.
        match a.cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => Vector3::repeat(f64::NAN),
        }
    }

    /// Run a zero-order-hold control loop and record one log row per control tick.
    ///
    /// The controller is called at every tick, including the final one, so the
    /// log holds `round(duration / control_dt) + 1` rows. The recorded torque is
    /// the clamped command issued at that tick.
    pub fn run_episode<C>(
        &self,
        initial: SimState,
        mut controller: C,
        duration: f64,
        control_dt: f64,
        physics_substeps: usize,
    ) -> Result<TrajectoryLog, EpisodeError>
    where
        C: FnMut(&SimState) -> [f64; 2],
    {
        if !(control_dt > 0.0) || physics_substeps == 0 {
            return Err(EpisodeError {
                log: TrajectoryLog::default(),
                source: SimError::InvalidInput(
                    "control_dt must be positive and physics_substeps >= 1".into(),
                ),
            });
        }
        let ticks = (duration / control_dt).round() as usize;
        let dt = control_dt / physics_substeps as f64;
        let mut log = TrajectoryLog::default();
        let mut state = initial;
        for tick in 0..=ticks {
            let tau = self.clamp_torques(controller(&state));
            log.rows.push(self.log_row(&state, tau));
            if tick == ticks {
                break;
            }
            for _ in 0..physics_substeps {
                state = match self.step(&state, tau, dt) {
                    Ok(s) => s,
                    Err(source) => return Err(EpisodeError { log, source }),
                };
            }
        }
        Ok(log)
    }

    pub fn log_row(&self, state: &SimState, tau: [f64; 2]) -> LogRow {
        let foot = self.foot_position(state);
        LogRow {
            t: state.t,
            q: [state.q[0], state.q[1], state.q[2]],
            qd: [state.qd[0], state.qd[1], state.qd[2]],
            tau,
            foot: [foot.x, foot.y],
            contact: state.in_contact,
            f_n: state.f_normal,
        }
    }
}

/// A failed episode together with everything logged before the failure.
#[derive(Debug, Error)]
#[error("{source}")]
pub struct EpisodeError {
    pub log: TrajectoryLog,
    #[source]
    pub source: SimError,
}
