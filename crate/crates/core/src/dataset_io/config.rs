//! Run configuration file (TOML).
//!
//! ```toml
//! [filter]
//! n_legs = 4            # required
//! gate_sigma = 5.0
//!
//! [noise]
//! sigma_zupt = 0.02
//! [noise.imu]
//! gyro_noise = 6.98e-5
//!
//! [gait]
//! gait = "walk"
//! path = { shape = "figure_eight", size = 4.0 }
//!
//! [sim]
//! zero_noise = false
//!
//! [run]
//! contact = "schedule"
//! ```
//!
//! Every section except `[filter]` is optional and unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contact::GlrtConfig;
use crate::ekf::{Extrinsics, FilterConfig, InitConfig, NoiseConfig};
use crate::error::{Error, Result};
use crate::kinematics::LegParams;
use crate::math_nav::STANDARD_GRAVITY;
use crate::simulator::{GaitConfig, SimConfig, SimOptions};

/// Scalar filter settings; see [`FilterConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub n_legs: usize,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    #[serde(default = "default_gate")]
    pub gate_sigma: f64,
    #[serde(default = "yes")]
    pub enable_relpos: bool,
    #[serde(default = "yes")]
    pub enable_zupt: bool,
    #[serde(default = "yes")]
    pub enable_all_static: bool,
    #[serde(default = "default_init_duration")]
    pub init_duration: f64,
}

fn default_gravity() -> f64 {
    STANDARD_GRAVITY
}
fn default_gate() -> f64 {
    5.0
}
fn yes() -> bool {
    true
}
fn default_init_duration() -> f64 {
    2.0
}

/// Where contact flags come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ContactSource {
    /// The dataset's contact log when present, otherwise the detector.
    #[default]
    Auto,
    Schedule,
    Glrt,
}

/// Pipeline settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    pub contact: ContactSource,
    /// Calibrate the detector threshold against the contact log when one
    /// exists, otherwise against the initialization window.
    pub calibrate_gamma: bool,
    /// Lower bound of a calibrated threshold, m/s^2.
    pub gamma_floor: f64,
    /// Segment length of the relative pose error, m.
    pub rpe_delta: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            contact: ContactSource::Auto,
            calibrate_gamma: true,
            gamma_floor: 0.05,
            rpe_delta: 10.0,
        }
    }
}

/// Contents of one configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub filter: FilterSection,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub glrt: GlrtConfig,
    #[serde(default)]
    pub extrinsics: Extrinsics,
    /// Defaults to the standard quadruped layout when empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub legs: Vec<LegParams>,
    #[serde(default)]
    pub gait: GaitConfig,
    #[serde(default)]
    pub sim: SimOptions,
    #[serde(default)]
    pub run: RunOptions,
}

impl RunConfig {
    /// Defaults for `n_legs` legs.
    pub fn new(n_legs: usize) -> Self {
        Self {
            filter: FilterSection {
                n_legs,
                gravity: default_gravity(),
                gate_sigma: default_gate(),
                enable_relpos: true,
                enable_zupt: true,
                enable_all_static: true,
                init_duration: default_init_duration(),
            },
            noise: NoiseConfig::default(),
            init: InitConfig::default(),
            glrt: GlrtConfig::default(),
            extrinsics: Extrinsics::default(),
            legs: Vec::new(),
            gait: GaitConfig::default(),
            sim: SimOptions::default(),
            run: RunOptions::default(),
        }
    }

    fn legs(&self) -> Vec<LegParams> {
        if self.legs.is_empty() {
            (0..self.filter.n_legs).map(LegParams::quadruped_default).collect()
        } else {
            self.legs.clone()
        }
    }

    pub fn filter_config(&self) -> FilterConfig {
        let f = &self.filter;
        FilterConfig {
            n_legs: f.n_legs,
            gravity: f.gravity,
            gate_sigma: f.gate_sigma,
            enable_relpos: f.enable_relpos,
            enable_zupt: f.enable_zupt,
            enable_all_static: f.enable_all_static,
            init_duration: f.init_duration,
            noise: self.noise.clone(),
            init: self.init,
            glrt: self.glrt,
            extrinsics: self.extrinsics,
            legs: self.legs(),
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            gait: self.gait.clone(),
            legs: self.legs(),
            extrinsics: self.extrinsics,
            noise: self.noise.clone(),
            options: self.sim,
            gravity: self.filter.gravity,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.filter_config().validate()?;
        self.gait.validate()?;
        self.gait.offsets(self.filter.n_legs)?;
        let s = &self.sim;
        let sim_vals = [s.gyro_turn_on, s.accel_turn_on, s.leg_param_sigma];
        if sim_vals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("sim: turn-on biases and leg_param_sigma must be >= 0".into()));
        }
        let r = &self.run;
        if !(r.gamma_floor > 0.0 && r.rpe_delta > 0.0) {
            return Err(Error::Config("run: gamma_floor and rpe_delta must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("serializing config: {e}")))
    }
}

/// Parse and validate configuration text; `name` labels errors.
pub fn parse_config(text: &str, name: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("{name}: {e}")))?;
    cfg.validate()
        .map_err(|e| Error::Config(format!("{name}: {}", e.to_string().trim_start_matches("invalid configuration: "))))?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, &path.display().to_string())
}

pub fn save_config(path: impl AsRef<Path>, cfg: &RunConfig) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, cfg.to_toml()?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::PathShape;

    #[test]
    fn minimal_config_fills_defaults() {
        let cfg = parse_config("[filter]\nn_legs = 4\n", "c").unwrap();
        assert_eq!(cfg, RunConfig::new(4));
        assert_eq!(cfg.filter_config(), FilterConfig::new(4));
        assert_eq!(cfg.sim_config().gait, GaitConfig::default());
    }

    #[test]
    fn missing_key_is_named() {
        let err = parse_config("[filter]\ngravity = 9.8\n", "c").unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("n_legs"), "{err}");
    }

    #[test]
    fn negative_tau_is_rejected() {
        let err = parse_config("[filter]\nn_legs = 4\n[noise.imu]\ngyro_bias_tau = -1.0\n", "c")
            .unwrap_err();
        assert!(err.is_config(), "{err}");
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = parse_config("[filter]\nn_legs = 4\n[noise]\nsigma_zpt = 0.1\n", "c").unwrap_err();
        assert!(err.to_string().contains("sigma_zpt"), "{err}");
    }

    #[test]
    fn serialize_load_round_trip() {
        let mut cfg = RunConfig::new(4);
        cfg.gait.path = PathShape::FigureEight { size: 4.0 };
        cfg.gait.phase_offsets = Some(vec![0.0, 0.5, 0.5, 0.0]);
        cfg.noise.overrides.insert("leg1".into(), cfg.noise.imu.scaled(3.0));
        cfg.noise.sigma_encoder = 1.0 / 3.0 * 1e-3;
        cfg.legs = (0..4).map(LegParams::quadruped_default).collect();
        cfg.run.contact = ContactSource::Glrt;
        let text = cfg.to_toml().unwrap();
        assert_eq!(parse_config(&text, "c").unwrap(), cfg);
    }
}
