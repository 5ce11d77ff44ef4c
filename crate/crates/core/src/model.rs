//! Robot description and planar kinematics of the two-link leg.
//!
//! World frame: `x` points up along the rail, `y` is horizontal. The leg hangs
//! from the carriage; with both joint angles at zero the links point straight
//! down. A positive hip angle swings the leg towards `-y`, and the knee angle is
//! measured relative to the upper link.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("target out of workspace: radius {radius:.6} m outside [{min:.6}, {max:.6}]")]
    OutOfWorkspace { radius: f64, min: f64, max: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid robot model: {0}")]
pub struct InvalidModel(pub String);

/// Index of the hip joint in per-joint arrays.
pub const HIP: usize = 0;
/// Index of the knee joint in per-joint arrays.
pub const KNEE: usize = 1;

/// Geometric, inertial and limit parameters of the leg and rail carriage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobotModel {
    /// Upper (shank) link length, m.
    pub l1: f64,
    /// Lower (calf) link length, m.
    pub l2: f64,
    /// Carriage mass, kg.
    pub m_base: f64,
    pub m1: f64,
    pub m2: f64,
    /// Centre-of-mass offsets from the proximal joint along each link, m.
    pub com1: f64,
    pub com2: f64,
    /// Nominal link inertias about their centres of mass, kg m^2. The
    /// simulator uses the identifiable copy in `SimParams`.
    pub iz1: f64,
    pub iz2: f64,
    /// Point mass used by the energy-shaping controller, kg.
    pub m_total: f64,
    /// Lower joint limits (hip, knee), rad.
    pub q_low: [f64; 2],
    /// Upper joint limits (hip, knee), rad.
    pub q_high: [f64; 2],
    /// Joint velocity saturation (hip, knee), rad/s.
    pub qd_max: [f64; 2],
    /// Motor torque limits (hip, knee), N m.
    pub tau_max: [f64; 2],
    /// Knee belt transmission: joint torque = motor torque * belt_ratio.
    pub belt_ratio: f64,
    /// Signed gravitational acceleration along `x`, m/s^2 (negative is down).
    pub gravity: f64,
}

impl Default for RobotModel {
    fn default() -> Self {
        let l = 0.1;
        let m_total = 2.5;
        Self {
            l1: l,
            l2: l,
            m_base: 0.60 * m_total,
            m1: 0.25 * m_total,
            m2: 0.15 * m_total,
            com1: 0.5 * l,
            com2: 0.5 * l,
            iz1: 0.004061,
            iz2: 0.000845,
            m_total,
            q_low: [-1.6, -0.2],
            q_high: [1.6, 2.8],
            qd_max: [25.0, 25.0],
            tau_max: [12.0, 12.0],
            belt_ratio: 2.0,
            gravity: -9.81,
        }
    }
}

/// Generalized configuration: rail height and the two joint angles.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Configuration {
    /// Carriage height along the rail, m.
    pub x: f64,
    pub q_hip: f64,
    pub q_knee: f64,
}

impl Configuration {
    pub fn new(x: f64, q_hip: f64, q_knee: f64) -> Self {
        Self { x, q_hip, q_knee }
    }

    pub fn joints(&self) -> [f64; 2] {
        [self.q_hip, self.q_knee]
    }
}

impl RobotModel {
    pub fn validate(&self) -> Result<(), InvalidModel> {
        let positive = [
            ("l1", self.l1),
            ("l2", self.l2),
            ("m_base", self.m_base),
            ("m1", self.m1),
            ("m2", self.m2),
            ("iz1", self.iz1),
            ("iz2", self.iz2),
            ("m_total", self.m_total),
            ("belt_ratio", self.belt_ratio),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(InvalidModel(format!("{name} must be positive, got {v}")));
            }
        }
        for j in 0..2 {
            if !(self.q_low[j] < self.q_high[j]) {
                return Err(InvalidModel(format!(
                    "joint {j}: q_low {} must be below q_high {}",
                    self.q_low[j], self.q_high[j]
                )));
            }
            if !(self.qd_max[j] > 0.0) {
                return Err(InvalidModel(format!("joint {j}: qd_max must be positive")));
            }
            if !(self.tau_max[j] > 0.0) {
                return Err(InvalidModel(format!("joint {j}: tau_max must be positive")));
            }
        }
        if !self.gravity.is_finite() {
            return Err(InvalidModel("gravity must be finite".into()));
        }
        Ok(())
    }

    /// Total leg length at full extension.
    pub fn leg_length(&self) -> f64 {
        self.l1 + self.l2
    }

    /// Sum of all body masses.
    pub fn body_mass(&self) -> f64 {
        self.m_base + self.m1 + self.m2
    }

    /// Joint-side torque limits after the knee belt transmission.
    pub fn joint_torque_limits(&self) -> [f64; 2] {
        [self.tau_max[HIP], self.tau_max[KNEE] * self.belt_ratio]
    }

    /// Foot position relative to the carriage.
    pub fn foot_offset(&self, q_hip: f64, q_knee: f64) -> Vector2<f64> {
        let q12 = q_hip + q_knee;
        Vector2::new(
            -self.l1 * q_hip.cos() - self.l2 * q12.cos(),
            -self.l1 * q_hip.sin() - self.l2 * q12.sin(),
        )
    }

    /// Base height at which the foot of the given pose just touches the ground.
    pub fn standing_height(&self, q_hip: f64, q_knee: f64) -> f64 {
        -self.foot_offset(q_hip, q_knee).x
    }
}

/// Foot position `(x_f, y_f)` in the world frame.
pub fn forward_kinematics(model: &RobotModel, cfg: &Configuration) -> Vector2<f64> {
    model.foot_offset(cfg.q_hip, cfg.q_knee) + Vector2::new(cfg.x, 0.0)
}

/// Joint angles placing the foot at `target` for a carriage at `carriage_height`.
///
/// Always returns the branch with a non-negative knee angle.
pub fn inverse_kinematics(
    model: &RobotModel,
    carriage_height: f64,
    target: Vector2<f64>,
) -> Result<Configuration, KinematicsError> {
    // Coordinates along the hanging leg: `u` down the rail, `v` towards -y.
    let u = carriage_height - target.x;
    let v = -target.y;
    let r = u.hypot(v);
    let (l1, l2) = (model.l1, model.l2);
    let min = (l1 - l2).abs();
    let max = l1 + l2;
    let slack = 1e-12 * max;
    if r > max + slack || r < min - slack {
        return Err(KinematicsError::OutOfWorkspace {
            radius: r,
            min,
            max,
        });
    }
    let c = ((r * r - l1 * l1 - l2 * l2) / (2.0 * l1 * l2)).clamp(-1.0, 1.0);
    let s = (1.0 - c * c).max(0.0).sqrt();
    let q_knee = s.atan2(c);
    let q_hip = v.atan2(u) - (l2 * s).atan2(l1 + l2 * c);
    Ok(Configuration {
        x: carriage_height,
        q_hip,
        q_knee,
    })
}

/// Foot velocity Jacobian with respect to `(q_hip, q_knee)`.
pub fn end_effector_jacobian(model: &RobotModel, cfg: &Configuration) -> Matrix2<f64> {
    let (s1, c1) = cfg.q_hip.sin_cos();
    let (s12, c12) = (cfg.q_hip + cfg.q_knee).sin_cos();
    let (l1, l2) = (model.l1, model.l2);
    Matrix2::new(
        l1 * s1 + l2 * s12,
        l2 * s12,
        -l1 * c1 - l2 * c12,
        -l2 * c12,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn long_leg() -> RobotModel {
        RobotModel {
            l1: 0.2,
            l2: 0.2,
            ..RobotModel::default()
        }
    }

    #[test]
    fn extended_pose_hangs_straight_down() {
        let m = long_leg();
        let foot = forward_kinematics(&m, &Configuration::new(0.5, 0.0, 0.0));
        assert!((foot.x - 0.1).abs() < 1e-15);
        assert!(foot.y.abs() < 1e-15);
    }

    #[test]
    fn hip_quarter_turn_points_leg_sideways() {
        let m = long_leg();
        let foot = forward_kinematics(&m, &Configuration::new(0.5, FRAC_PI_2, 0.0));
        assert!((foot.x - 0.5).abs() < 1e-15);
        assert!((foot.y + 0.4).abs() < 1e-15);
    }

    #[test]
    fn ik_of_extended_foot_is_zero() {
        let m = long_leg();
        let cfg = inverse_kinematics(&m, 0.5, Vector2::new(0.1, 0.0)).unwrap();
        assert!(cfg.q_hip.abs() < 1e-12);
        assert!(cfg.q_knee.abs() < 1e-6);
    }

    #[test]
    fn ik_rejects_unreachable_radius() {
        let m = long_leg();
        let err = inverse_kinematics(&m, 0.5, Vector2::new(0.5 - 0.41, 0.0)).unwrap_err();
        match err {
            KinematicsError::OutOfWorkspace { radius, .. } => assert!((radius - 0.41).abs() < 1e-12),
        }
    }

    #[test]
    fn knee_column_orthogonal_to_leg_at_extension() {
        let m = long_leg();
        let j = end_effector_jacobian(&m, &Configuration::new(0.3, 0.0, 0.0));
        assert_eq!(j[(0, 1)], 0.0);
        assert!((j[(1, 1)] + m.l2).abs() < 1e-15);
    }

    #[test]
    fn jacobian_scales_with_link_lengths() {
        let m = long_leg();
        let m2 = RobotModel {
            l1: 2.0 * m.l1,
            l2: 2.0 * m.l2,
            ..m.clone()
        };
        let cfg = Configuration::new(0.0, 0.3, 1.1);
        let j = end_effector_jacobian(&m, &cfg);
        let j2 = end_effector_jacobian(&m2, &cfg);
        assert!((j2 - 2.0 * j).abs().max() < 1e-15);
    }

    #[test]
    fn default_model_is_valid() {
        RobotModel::default().validate().unwrap();
        let mut bad = RobotModel::default();
        bad.q_low[1] = 3.0;
        assert!(bad.validate().is_err());
    }
}
