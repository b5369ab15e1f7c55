use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::contact::GlrtConfig;
use crate::error::{Error, Result};
use crate::kinematics::LegParams;
use crate::math_nav::{EulerAngles, Rotation, Vec3, STANDARD_GRAVITY};

const DEG: f64 = std::f64::consts::PI / 180.0;

/// Noise model of one IMU. Densities are per square-root hertz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuNoise {
    /// Angle random walk, rad/s/sqrt(Hz).
    pub gyro_noise: f64,
    /// Velocity random walk, m/s^2/sqrt(Hz).
    pub accel_noise: f64,
    /// Stationary standard deviation of the gyro bias, rad/s.
    pub gyro_bias_sigma: f64,
    /// Stationary standard deviation of the accelerometer bias, m/s^2.
    pub accel_bias_sigma: f64,
    /// Gauss-Markov correlation times, s.
    pub gyro_bias_tau: f64,
    pub accel_bias_tau: f64,
}

impl Default for ImuNoise {
    /// ICM20602-class MEMS IMU.
    fn default() -> Self {
        Self {
            gyro_noise: 0.24 * DEG / 60.0,
            accel_noise: 0.03 / 60.0,
            gyro_bias_sigma: 10.0 * DEG / 3600.0,
            accel_bias_sigma: 1e-3,
            gyro_bias_tau: 3600.0,
            accel_bias_tau: 3600.0,
        }
    }
}

impl ImuNoise {
    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.gyro_noise,
            self.accel_noise,
            self.gyro_bias_sigma,
            self.accel_bias_sigma,
        ];
        if vals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("noise densities must be finite and >= 0".into()));
        }
        if !(self.gyro_bias_tau > 0.0 && self.accel_bias_tau > 0.0) {
            return Err(Error::Config("bias correlation times must be positive".into()));
        }
        Ok(())
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            gyro_noise: self.gyro_noise * factor,
            accel_noise: self.accel_noise * factor,
            gyro_bias_sigma: self.gyro_bias_sigma * factor,
            accel_bias_sigma: self.accel_bias_sigma * factor,
            ..*self
        }
    }
}

/// Process and measurement noise of the filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    /// Default for every IMU.
    pub imu: ImuNoise,
    /// Per-IMU overrides keyed `body` or `leg<i>`.
    pub overrides: BTreeMap<String, ImuNoise>,
    /// Zero-velocity pseudo-measurement, m/s.
    pub sigma_zupt: f64,
    /// Joint encoder noise, rad.
    pub sigma_encoder: f64,
    /// Floor on the relative-position measurement noise, m.
    pub sigma_relpos_floor: f64,
    /// Foot slip random walk of the leg-odometry baseline, m/sqrt(s).
    pub foot_slip: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            imu: ImuNoise::default(),
            overrides: BTreeMap::new(),
            sigma_zupt: 0.02,
            sigma_encoder: 1e-3,
            sigma_relpos_floor: 5e-3,
            foot_slip: 2e-3,
        }
    }
}

impl NoiseConfig {
    pub fn for_imu(&self, role: ImuRole) -> ImuNoise {
        self.overrides
            .get(&role.key())
            .copied()
            .unwrap_or(self.imu)
    }

    pub fn validate(&self) -> Result<()> {
        self.imu.validate()?;
        for (k, v) in &self.overrides {
            if ImuRole::parse(k).is_none() {
                return Err(Error::Config(format!("unknown noise override key {k:?}")));
            }
            v.validate()?;
        }
        for (name, v) in [
            ("sigma_zupt", self.sigma_zupt),
            ("sigma_relpos_floor", self.sigma_relpos_floor),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.sigma_encoder.is_finite() && self.sigma_encoder >= 0.0) {
            return Err(Error::Config("sigma_encoder must be >= 0".into()));
        }
        if !(self.foot_slip.is_finite() && self.foot_slip >= 0.0) {
            return Err(Error::Config("foot_slip must be >= 0".into()));
        }
        Ok(())
    }
}

/// Initial one-sigma uncertainties.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitConfig {
    /// Body-IMU position, m. The world origin is the initial body origin.
    pub sigma_p_body: f64,
    /// Leg-IMU position from forward kinematics, m.
    pub sigma_p_leg: f64,
    pub sigma_v: f64,
    pub sigma_roll_pitch: f64,
    /// The world heading is the initial body heading.
    pub sigma_yaw_body: f64,
    /// Leg yaw is initialized to zero.
    pub sigma_yaw_leg: f64,
    pub sigma_bg: f64,
    pub sigma_ba: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            sigma_p_body: 1e-3,
            sigma_p_leg: 5e-3,
            sigma_v: 1e-2,
            sigma_roll_pitch: 0.5 * DEG,
            sigma_yaw_body: 0.1 * DEG,
            sigma_yaw_leg: 2.0 * DEG,
            sigma_bg: 2e-4,
            sigma_ba: 2e-2,
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.sigma_p_body,
            self.sigma_p_leg,
            self.sigma_v,
            self.sigma_roll_pitch,
            self.sigma_yaw_body,
            self.sigma_yaw_leg,
            self.sigma_bg,
            self.sigma_ba,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("initial sigmas must be positive".into()));
        }
        Ok(())
    }
}

/// Body-IMU mounting: pose of the Body-IMU frame in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Extrinsics {
    /// Roll, pitch, yaw of the Body-IMU frame, rad.
    pub rotation_rpy: [f64; 3],
    /// Body-IMU origin in the body frame, m.
    pub translation: [f64; 3],
}

impl Default for Extrinsics {
    fn default() -> Self {
        Self {
            rotation_rpy: [0.0; 3],
            translation: [0.0; 3],
        }
    }
}

impl Extrinsics {
    /// Rotation taking Body-IMU vectors into the body frame.
    pub fn rotation(&self) -> Rotation {
        let [r, p, y] = self.rotation_rpy;
        EulerAngles::new(r, p, y).to_rotation()
    }

    pub fn translation(&self) -> Vec3 {
        Vec3::from(self.translation)
    }
}

/// Identity of one IMU in a filter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ImuRole {
    Body,
    Leg(usize),
}

impl ImuRole {
    pub fn key(self) -> String {
        match self {
            ImuRole::Body => "body".into(),
            ImuRole::Leg(i) => format!("leg{i}"),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        if s == "body" {
            return Some(ImuRole::Body);
        }
        s.strip_prefix("leg")?.parse().ok().map(ImuRole::Leg)
    }
}

impl std::fmt::Display for ImuRole {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.key())
    }
}

/// Everything the estimators need besides the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub n_legs: usize,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
    /// Innovation gate, in equivalent Gaussian sigmas.
    #[serde(default = "default_gate")]
    pub gate_sigma: f64,
    #[serde(default = "yes")]
    pub enable_relpos: bool,
    #[serde(default = "yes")]
    pub enable_zupt: bool,
    /// ZUPT every IMU, the body included, when all legs are in contact and
    /// the body is still.
    #[serde(default = "yes")]
    pub enable_all_static: bool,
    /// Length of the static window used for initialization, s.
    #[serde(default = "default_init_duration")]
    pub init_duration: f64,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub init: InitConfig,
    #[serde(default)]
    pub glrt: GlrtConfig,
    #[serde(default)]
    pub extrinsics: Extrinsics,
    /// Leg geometry; defaults to the standard quadruped layout.
    #[serde(default)]
    pub legs: Vec<LegParams>,
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

impl FilterConfig {
    pub fn new(n_legs: usize) -> Self {
        Self {
            n_legs,
            gravity: STANDARD_GRAVITY,
            gate_sigma: default_gate(),
            enable_relpos: true,
            enable_zupt: true,
            enable_all_static: true,
            init_duration: default_init_duration(),
            noise: NoiseConfig::default(),
            init: InitConfig::default(),
            glrt: GlrtConfig::default(),
            extrinsics: Extrinsics::default(),
            legs: (0..n_legs).map(LegParams::quadruped_default).collect(),
        }
    }

    /// Fill in default legs when none were given, then validate.
    pub fn resolved(mut self) -> Result<Self> {
        if self.legs.is_empty() {
            self.legs = (0..self.n_legs).map(LegParams::quadruped_default).collect();
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_legs == 0 {
            return Err(Error::Config("n_legs must be at least 1".into()));
        }
        if self.legs.len() != self.n_legs {
            return Err(Error::Config(format!(
                "{} leg parameter sets for n_legs = {}",
                self.legs.len(),
                self.n_legs
            )));
        }
        if !(self.gravity.is_finite() && self.gravity > 0.0) {
            return Err(Error::Config("gravity must be positive".into()));
        }
        if !(self.gate_sigma > 0.0) {
            return Err(Error::Config("gate_sigma must be positive".into()));
        }
        if !(self.init_duration > 0.0) {
            return Err(Error::Config("init_duration must be positive".into()));
        }
        for l in &self.legs {
            l.validate()?;
        }
        for v in self.extrinsics.rotation_rpy.iter().chain(&self.extrinsics.translation) {
            if !v.is_finite() {
                return Err(Error::Config("extrinsics must be finite".into()));
            }
        }
        self.noise.validate()?;
        self.init.validate()?;
        self.glrt.validate()?;
        for key in self.noise.overrides.keys() {
            if let Some(ImuRole::Leg(i)) = ImuRole::parse(key) {
                if i >= self.n_legs {
                    return Err(Error::Config(format!("noise override for missing leg {i}")));
                }
            }
        }
        Ok(())
    }

    pub fn gate_threshold(&self) -> f64 {
        super::covariance::chi2_3dof_gate(self.gate_sigma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        FilterConfig::new(4).validate().unwrap();
        let mut c = FilterConfig::new(4);
        c.legs.pop();
        assert!(c.validate().unwrap_err().is_config());
    }

    #[test]
    fn role_keys_round_trip() {
        for r in [ImuRole::Body, ImuRole::Leg(0), ImuRole::Leg(3)] {
            assert_eq!(ImuRole::parse(&r.key()), Some(r));
        }
        assert_eq!(ImuRole::parse("foot1"), None);
    }

    #[test]
    fn overrides_are_applied() {
        let mut n = NoiseConfig::default();
        let special = n.imu.scaled(2.0);
        n.overrides.insert("leg2".into(), special);
        assert_eq!(n.for_imu(ImuRole::Leg(2)), special);
        assert_eq!(n.for_imu(ImuRole::Leg(1)), n.imu);
        n.overrides.insert("wheel".into(), special);
        assert!(n.validate().is_err());
    }
}
