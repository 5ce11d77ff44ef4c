//! TOML configuration shared by every command.
//!
//! Sections: `[model]`, `[sim]` (identifiable parameters used by replay, fit
//! and the RL environment), `[trial_sim]` (parameters for energy-shaping
//! trials), `[options]`, `[es]`, `[trial]`, `[env]` and `[sysid]`. Every key
//! is optional and unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::control::{retracted_pose, ApexFeedback, EsGains};
use crate::model::RobotModel;
use crate::rlenv::EnvConfig;
use crate::sim::{SimOptions, SimParams};
use crate::sysid::FitSettings;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(String),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EsSettings {
    pub k0: f64,
    pub kp_y: f64,
    pub kd_y: f64,
    /// Foot retraction of the flight pose, fraction of leg length.
    pub flight_retraction: f64,
    pub flight_kp: f64,
    pub flight_kd: f64,
    pub touchdown_kp: f64,
    pub touchdown_kd: f64,
    pub contact_threshold: f64,
    pub apex_feedback: ApexFeedback,
}

impl Default for EsSettings {
    fn default() -> Self {
        let g = EsGains::for_model(&RobotModel::default());
        Self {
            k0: g.k0,
            kp_y: g.kp_y,
            kd_y: g.kd_y,
            flight_retraction: 0.15,
            flight_kp: g.flight_kp,
            flight_kd: g.flight_kd,
            touchdown_kp: g.touchdown_kp,
            touchdown_kd: g.touchdown_kd,
            contact_threshold: g.contact_threshold,
            apex_feedback: g.apex_feedback,
        }
    }
}

impl EsSettings {
    pub fn gains(&self, model: &RobotModel) -> EsGains {
        EsGains {
            k0: self.k0,
            kp_y: self.kp_y,
            kd_y: self.kd_y,
            flight_pose: retracted_pose(model, self.flight_retraction),
            flight_kp: self.flight_kp,
            flight_kd: self.flight_kd,
            touchdown_kp: self.touchdown_kp,
            touchdown_kd: self.touchdown_kd,
            contact_threshold: self.contact_threshold,
            apex_feedback: self.apex_feedback,
        }
    }
}

/// Timing of simulated hopping trials.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrialSettings {
    pub control_rate: f64,
    pub substeps: usize,
    pub duration: f64,
    /// Foot retraction of the initial standing pose, fraction of leg length.
    pub start_retraction: f64,
    /// Jumps dropped from the start of each command segment.
    pub discard_jumps: usize,
    /// Contact-free intervals shorter than this are not counted as flights, s.
    pub min_flight_time: f64,
}

impl Default for TrialSettings {
    fn default() -> Self {
        Self {
            control_rate: 400.0,
            substeps: 10,
            duration: 15.0,
            start_retraction: 0.3,
            discard_jumps: 3,
            min_flight_time: 0.02,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SysidSettings {
    /// Multiplier on the grid amplitudes; defaults to leg length / 0.4 m.
    pub amplitude_scale: Option<f64>,
    /// Seconds of data per base configuration.
    pub total_duration: f64,
    pub sample_rate: f64,
    /// Multiplicative perturbation of the synthetic-recovery starting point.
    pub perturbation: f64,
    /// Initial search box factor around the starting point.
    pub initial_box: f64,
    pub fit: FitSettings,
}

impl Default for SysidSettings {
    fn default() -> Self {
        Self {
            amplitude_scale: None,
            total_duration: 240.0,
            sample_rate: 200.0,
            perturbation: 1.5,
            initial_box: 3.0,
            fit: FitSettings::default(),
        }
    }
}

impl SysidSettings {
    pub fn amplitude_scale(&self, model: &RobotModel) -> f64 {
        self.amplitude_scale.unwrap_or(model.leg_length() / 0.4)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: RobotModel,
    pub sim: SimParams,
    pub trial_sim: SimParams,
    pub options: SimOptions,
    pub es: EsSettings,
    pub trial: TrialSettings,
    pub env: EnvConfig,
    pub sysid: SysidSettings,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            model: RobotModel::default(),
            sim: SimParams::default(),
            trial_sim: SimParams::hopping_trial(),
            options: SimOptions::default(),
            es: EsSettings::default(),
            trial: TrialSettings::default(),
            env: EnvConfig::default(),
            sysid: SysidSettings::default(),
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: Config = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ConfigError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml()).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |section: &str, e: &dyn std::fmt::Display| ConfigError::Invalid(format!("[{section}] {e}"));
        self.model.validate().map_err(|e| invalid("model", &e))?;
        self.sim.validate().map_err(|e| invalid("sim", &e))?;
        self.trial_sim.validate().map_err(|e| invalid("trial_sim", &e))?;
        self.env.validate().map_err(|e| invalid("env", &e))?;
        if !(0.0..1.0).contains(&self.es.flight_retraction) {
            return Err(invalid("es", &"flight_retraction must lie in [0, 1)"));
        }
        if !(self.es.kp_y >= 0.0 && self.es.kd_y >= 0.0 && self.es.k0 > 0.0) {
            return Err(invalid("es", &"k0 must be positive and kp_y, kd_y non-negative"));
        }
        if !(0.0..1.0).contains(&self.trial.start_retraction) {
            return Err(invalid("trial", &"start_retraction must lie in [0, 1)"));
        }
        if !(self.trial.control_rate > 0.0 && self.trial.substeps >= 1 && self.trial.duration > 0.0) {
            return Err(invalid("trial", &"control_rate, substeps and duration must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        assert_eq!(Config::from_toml("").unwrap(), Config::default());
    }

    #[test]
    fn roundtrip() {
        let mut c = Config::default();
        c.model.l1 = 0.12;
        c.sim.knee_damping = 0.2;
        c.es.apex_feedback = ApexFeedback::Estimated;
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = Config::from_toml("[model]\nlink_length = 0.3\n").unwrap_err();
        assert!(err.to_string().contains("link_length"), "{err}");
    }

    #[test]
    fn invalid_value_names_section() {
        let err = Config::from_toml("[sim]\ncontact_time_constant = -1.0\n").unwrap_err();
        assert!(err.to_string().contains("[sim]"), "{err}");
    }
}
