//! Strapdown inertial mechanization of a single IMU.
//!
//! One trapezoidal step per sample pair, no coning or sculling terms. Earth
//! rotation is ignored; gravity is a constant world vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math_nav::{exp_so3, Rotation, Vec3};

/// Largest step `mechanize` accepts.
pub const MAX_DT: f64 = 0.1;

/// Full-scale sanity bounds of an ICM20602-class sensor.
pub const GYRO_FULL_SCALE: f64 = 35.0;
pub const ACCEL_FULL_SCALE: f64 = 160.0;

/// One gyro/accelerometer reading, both in the IMU frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    /// Seconds, strictly increasing within a stream.
    pub t: f64,
    /// Angular rate, rad/s.
    pub gyro: Vec3,
    /// Specific force, m/s^2.
    pub accel: Vec3,
}

impl ImuSample {
    pub fn new(t: f64, gyro: Vec3, accel: Vec3) -> Self {
        Self { t, gyro, accel }
    }

    /// Finite and inside the sensor's full-scale range.
    pub fn is_plausible(&self) -> bool {
        self.t.is_finite()
            && self.gyro.iter().all(|x| x.is_finite())
            && self.accel.iter().all(|x| x.is_finite())
            && self.gyro.amax() < GYRO_FULL_SCALE
            && self.accel.amax() < ACCEL_FULL_SCALE
    }
}

/// Nominal navigation state of one IMU frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavState {
    /// Position in the world frame, m.
    pub p: Vec3,
    /// Velocity in the world frame, m/s.
    pub v: Vec3,
    /// IMU-to-world rotation.
    pub r: Rotation,
    /// Gyro bias estimate, rad/s.
    pub bg: Vec3,
    /// Accelerometer bias estimate, m/s^2.
    pub ba: Vec3,
}

impl NavState {
    pub fn at_rest(p: Vec3, r: Rotation) -> Self {
        Self {
            p,
            v: Vec3::zeros(),
            r,
            bg: Vec3::zeros(),
            ba: Vec3::zeros(),
        }
    }
}

/// Remove the current bias estimates from a raw sample.
pub fn correct_sample(raw: &ImuSample, bg: &Vec3, ba: &Vec3) -> ImuSample {
    ImuSample {
        t: raw.t,
        gyro: raw.gyro - bg,
        accel: raw.accel - ba,
    }
}

/// Inverse of [`correct_sample`].
pub fn apply_bias(clean: &ImuSample, bg: &Vec3, ba: &Vec3) -> ImuSample {
    ImuSample {
        t: clean.t,
        gyro: clean.gyro + bg,
        accel: clean.accel + ba,
    }
}

/// Check a step length against the hard bounds of [`mechanize`].
pub fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt <= MAX_DT {
        Ok(())
    } else {
        Err(Error::BadTimeStep { dt, max: MAX_DT })
    }
}

/// Classification of the gap between two consecutive samples of a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapKind {
    Nominal,
    /// Dropout of up to three nominal periods; usable with a warning.
    Dropout,
}

/// Tolerate dropouts of up to three nominal periods, reject anything larger.
pub fn classify_gap(dt: f64, nominal_period: f64) -> Result<GapKind> {
    check_dt(dt)?;
    if dt > 3.0 * nominal_period + 1e-9 {
        return Err(Error::BadTimeStep {
            dt,
            max: 3.0 * nominal_period,
        });
    }
    if dt > 1.5 * nominal_period {
        log::warn!("IMU dropout: dt = {:.4} s ({:.1} periods)", dt, dt / nominal_period);
        Ok(GapKind::Dropout)
    } else {
        Ok(GapKind::Nominal)
    }
}

/// Advance `state` from `prev.t` to `cur.t` using bias-corrected samples.
///
/// Attitude uses the trapezoidal angular increment, velocity the average of
/// the rotated specific force at both ends plus gravity, position the
/// trapezoidal velocity. Biases are carried unchanged.
pub fn mechanize(
    state: &NavState,
    prev: &ImuSample,
    cur: &ImuSample,
    gravity: &Vec3,
) -> Result<NavState> {
    let dt = cur.t - prev.t;
    check_dt(dt)?;
    let theta = (prev.gyro + cur.gyro) * (0.5 * dt);
    let r = state.r * exp_so3(&theta);
    let f_prev = state.r * prev.accel;
    let f_cur = r * cur.accel;
    let v = state.v + (f_prev + f_cur) * (0.5 * dt) + gravity * dt;
    let p = state.p + (state.v + v) * (0.5 * dt);
    Ok(NavState {
        p,
        v,
        r,
        bg: state.bg,
        ba: state.ba,
    })
}
