//! Kinematic quadruped gait simulator.
//!
//! The body follows an analytic planar path at constant height with a small
//! vertical oscillation; feet alternate between world-fixed footholds and
//! smooth swing arcs. Joint angles follow from inverse kinematics, Leg-IMU
//! poses from the leg chain. IMU signals are derived from the poses and then
//! corrupted with white noise and Gauss-Markov biases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::ekf::{Extrinsics, ImuNoise, ImuRole, NoiseConfig};
use crate::error::{Error, Result};
use crate::kinematics::{inverse_kinematics, leg_imu_pose_unchecked, JointAngles, LegParams};
use crate::math_nav::{log_so3, Rotation, Vec3, STANDARD_GRAVITY};
use crate::strapdown::ImuSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gait {
    Walk,
    Trot,
    Stand,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum PathShape {
    Straight,
    Circle { radius: f64 },
    /// Lemniscate of Gerono with half-width `size`; crosses itself at the start.
    FigureEight { size: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaitConfig {
    pub gait: Gait,
    /// s
    pub cycle_period: f64,
    pub duty_factor: f64,
    /// Per-leg phase offsets in cycles; gait defaults when absent.
    pub phase_offsets: Option<Vec<f64>>,
    /// Stride length, m. When set, overrides `body_speed` as stride / cycle.
    pub step_length: Option<f64>,
    /// Swing apex height, m.
    pub step_height: f64,
    /// m/s
    pub body_speed: f64,
    /// Hip height above the ground, m.
    pub body_height: f64,
    pub path: PathShape,
    /// Walking time after the initial stand, s.
    pub duration: f64,
    /// Standing time before walking starts, s.
    pub init_static: f64,
    /// Duration of the speed ramp at walk start, s.
    pub ramp_time: f64,
    /// Body height oscillation amplitude, m.
    pub height_amplitude: f64,
    /// Hz
    pub fs: f64,
    pub seed: u64,
}

impl Default for GaitConfig {
    fn default() -> Self {
        Self {
            gait: Gait::Walk,
            cycle_period: 0.8,
            duty_factor: 0.6,
            phase_offsets: None,
            step_length: None,
            step_height: 0.06,
            body_speed: 0.5,
            body_height: 0.30,
            path: PathShape::Straight,
            duration: 60.0,
            init_static: 2.0,
            ramp_time: 1.0,
            height_amplitude: 0.01,
            fs: 200.0,
            seed: 0,
        }
    }
}

impl GaitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("gait: {m}")));
        if !(self.duty_factor > 0.0 && self.duty_factor < 1.0) {
            return bad("duty_factor must lie in (0, 1)");
        }
        if !(self.cycle_period > 0.0 && self.fs > 0.0 && self.duration > 0.0) {
            return bad("cycle_period, fs and duration must be positive");
        }
        if !(self.init_static >= 2.0) {
            return bad("init_static must be at least 2 s");
        }
        if !(self.ramp_time > 0.0 && self.ramp_time <= self.duration) {
            return bad("ramp_time must lie in (0, duration]");
        }
        if !(self.body_speed >= 0.0 && self.step_height >= 0.0 && self.height_amplitude >= 0.0) {
            return bad("speed, step height and height amplitude must be non-negative");
        }
        if !(self.body_height > 0.0) {
            return bad("body_height must be positive");
        }
        if let Some(l) = self.step_length {
            if !(l >= 0.0) {
                return bad("step_length must be non-negative");
            }
        }
        match self.path {
            PathShape::Circle { radius: r } | PathShape::FigureEight { size: r } if !(r > 0.0) => {
                bad("path size must be positive")
            }
            _ => Ok(()),
        }
    }

    pub fn speed(&self) -> f64 {
        match self.step_length {
            Some(l) => l / self.cycle_period,
            None => self.body_speed,
        }
    }

    pub fn offsets(&self, n_legs: usize) -> Result<Vec<f64>> {
        if let Some(o) = &self.phase_offsets {
            if o.len() != n_legs {
                return Err(Error::Config(format!(
                    "gait: {} phase offsets for {n_legs} legs",
                    o.len()
                )));
            }
            return Ok(o.clone());
        }
        Ok(match (self.gait, n_legs) {
            (Gait::Walk, 4) => vec![0.0, 0.5, 0.75, 0.25],
            (Gait::Trot, 4) => vec![0.0, 0.5, 0.5, 0.0],
            (Gait::Trot, n) => (0..n).map(|i| 0.5 * (i % 2) as f64).collect(),
            (_, n) => (0..n).map(|i| i as f64 / n as f64).collect(),
        })
    }

    pub fn n_samples(&self) -> usize {
        ((self.init_static + self.duration) * self.fs).round() as usize + 1
    }
}

/// Simulation-only settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimOptions {
    /// Disable every random error source.
    pub zero_noise: bool,
    /// Constant turn-on bias magnitude per axis (one sigma), rad/s.
    pub gyro_turn_on: f64,
    /// m/s^2
    pub accel_turn_on: f64,
    /// One-sigma error of the true leg geometry against the nominal one, m.
    pub leg_param_sigma: f64,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            zero_noise: false,
            gyro_turn_on: 0.0,
            accel_turn_on: 0.0,
            leg_param_sigma: 0.0,
        }
    }
}

/// Sampled pose, velocity and inertial quantities of one frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub p: Vec<Vec3>,
    pub v: Vec<Vec3>,
    pub r: Vec<Rotation>,
    /// Angular rate in the moving frame.
    pub omega: Vec<Vec3>,
    /// Acceleration in the world frame.
    pub accel: Vec<Vec3>,
}

impl Trajectory {
    fn with_capacity(n: usize) -> Self {
        Self {
            t: Vec::with_capacity(n),
            p: Vec::with_capacity(n),
            v: Vec::with_capacity(n),
            r: Vec::with_capacity(n),
            omega: Vec::with_capacity(n),
            accel: Vec::with_capacity(n),
        }
    }

    fn push(&mut self, k: &Kin) {
        self.t.push(k.t);
        self.p.push(k.p);
        self.v.push(k.v);
        self.r.push(k.r);
        self.omega.push(k.omega);
        self.accel.push(k.accel);
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// True bias trajectory of one IMU.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BiasTrack {
    pub gyro: Vec<Vec3>,
    pub accel: Vec<Vec3>,
}

/// Ground truth of one simulated run. Leg-indexed vectors are `[leg][sample]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TruthLog {
    pub t: Vec<f64>,
    pub body: Trajectory,
    pub body_imu: Trajectory,
    pub leg_imus: Vec<Trajectory>,
    pub feet: Vec<Vec<Vec3>>,
    pub contact: Vec<Vec<bool>>,
    pub joints: Vec<Vec<JointAngles>>,
    /// Body-IMU first, then legs; empty until IMU data is synthesized.
    pub biases: Vec<BiasTrack>,
}

impl TruthLog {
    pub fn n_legs(&self) -> usize {
        self.feet.len()
    }

    /// Contact flags of every leg at sample `k`.
    pub fn contacts_at(&self, k: usize) -> Vec<bool> {
        self.contact.iter().map(|c| c[k]).collect()
    }
}

#[derive(Debug, Clone, Copy)]
struct Kin {
    t: f64,
    p: Vec3,
    v: Vec3,
    r: Rotation,
    omega: Vec3,
    accel: Vec3,
}

fn smoothstep5(x: f64) -> (f64, f64, f64) {
    let x = x.clamp(0.0, 1.0);
    let s = x * x * x * (10.0 - 15.0 * x + 6.0 * x * x);
    let d = 30.0 * x * x * (1.0 - x) * (1.0 - x);
    let dd = 60.0 * x * (1.0 - x) * (1.0 - 2.0 * x);
    (s, d, dd)
}

/// Integral of the quintic smoothstep from 0 to `x`.
fn smoothstep5_integral(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x.powi(4) * (2.5 - 3.0 * x + x * x)
}

/// Degree-11 smoothstep: derivatives one through five vanish at both ends.
fn smoothstep11(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    let poly = 462.0 + s * (-1980.0 + s * (3465.0 + s * (-3080.0 + s * (1386.0 - 252.0 * s))));
    s.powi(6) * poly
}

/// Analytic body path and timing.
#[derive(Debug, Clone)]
struct BodyPath {
    shape: PathShape,
    rate: f64,
    t_walk: f64,
    ramp: f64,
    heading0: f64,
    origin: Vec3,
    amp: f64,
    osc: f64,
}

impl BodyPath {
    fn new(cfg: &GaitConfig) -> Self {
        let speed = if cfg.gait == Gait::Stand { 0.0 } else { cfg.speed() };
        let t_eff = cfg.duration - 0.5 * cfg.ramp_time;
        let rate = match cfg.path {
            PathShape::Straight => speed,
            PathShape::Circle { radius } => {
                let loop_len = 2.0 * std::f64::consts::PI * radius;
                closed_rate(speed, t_eff, loop_len, loop_len)
            }
            PathShape::FigureEight { size } => {
                let loop_len = gerono_length(size);
                closed_rate(speed, t_eff, loop_len, 2.0 * std::f64::consts::PI)
            }
        };
        let mut path = Self {
            shape: cfg.path,
            rate,
            t_walk: cfg.init_static,
            ramp: cfg.ramp_time,
            heading0: 0.0,
            origin: Vec3::zeros(),
            amp: if speed > 0.0 { cfg.height_amplitude } else { 0.0 },
            osc: 2.0 * std::f64::consts::TAU / cfg.cycle_period,
        };
        let (p0, d0, _) = path.planar(0.0);
        path.heading0 = d0.y.atan2(d0.x);
        path.origin = p0;
        path
    }

    /// Unrotated path point and its first two derivatives in `u`.
    fn planar(&self, u: f64) -> (Vec3, Vec3, Vec3) {
        match self.shape {
            PathShape::Straight => (Vec3::new(u, 0.0, 0.0), Vec3::x(), Vec3::zeros()),
            PathShape::Circle { radius: r } => {
                let (s, c) = (u / r).sin_cos();
                (
                    Vec3::new(r * s, r * (1.0 - c), 0.0),
                    Vec3::new(c, s, 0.0),
                    Vec3::new(-s, c, 0.0) / r,
                )
            }
            PathShape::FigureEight { size: a } => {
                let (s, c) = u.sin_cos();
                let (s2, c2) = (2.0 * u).sin_cos();
                (
                    Vec3::new(a * s, 0.5 * a * s2, 0.0),
                    Vec3::new(a * c, a * c2, 0.0),
                    Vec3::new(-a * s, -2.0 * a * s2, 0.0),
                )
            }
        }
    }

    fn param(&self, t: f64) -> (f64, f64, f64) {
        if t <= self.t_walk || self.rate == 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let x = (t - self.t_walk) / self.ramp;
        let (s, ds, _) = smoothstep5(x);
        let u = if x < 1.0 {
            self.rate * self.ramp * smoothstep5_integral(x)
        } else {
            self.rate * (self.ramp * 0.5 + (t - self.t_walk - self.ramp))
        };
        (u, self.rate * s, self.rate * ds / self.ramp)
    }

    fn height(&self, t: f64) -> (f64, f64, f64) {
        if t <= self.t_walk || self.amp == 0.0 {
            return (0.0, 0.0, 0.0);
        }
        let tau = t - self.t_walk;
        let (s, ds, dds) = smoothstep5(tau / self.ramp);
        let (ds, dds) = (ds / self.ramp, dds / (self.ramp * self.ramp));
        let w = self.osc;
        let (sn, cs) = (w * tau).sin_cos();
        let z = self.amp * s * sn;
        let dz = self.amp * (ds * sn + s * w * cs);
        let ddz = self.amp * (dds * sn + 2.0 * ds * w * cs - s * w * w * sn);
        (z, dz, ddz)
    }

    fn yaw_rate(&self, t: f64) -> f64 {
        let (u, du, _) = self.param(t);
        let (_, d1, d2) = self.planar(u);
        d1.cross(&d2).z / d1.norm_squared() * du
    }

    /// Body pose, velocity and rates at `t`; `omega` is in the body frame.
    fn kin(&self, t: f64) -> (Kin, f64) {
        let (u, du, ddu) = self.param(t);
        let (p, d1, d2) = self.planar(u);
        let rot0 = Rotation::from_axis_angle(&Vec3::z_axis(), -self.heading0);
        let p = rot0 * (p - self.origin);
        let (d1r, d2r) = (rot0 * d1, rot0 * d2);
        let (z, dz, ddz) = self.height(t);
        let yaw = d1r.y.atan2(d1r.x);
        let yaw_rate = d1.cross(&d2).z / d1.norm_squared() * du;
        let h = 1e-4;
        let yaw_acc = (-self.yaw_rate(t + 2.0 * h) + 8.0 * self.yaw_rate(t + h)
            - 8.0 * self.yaw_rate(t - h)
            + self.yaw_rate(t - 2.0 * h))
            / (12.0 * h);
        let v = d1r * du + Vec3::new(0.0, 0.0, dz);
        let a = d2r * (du * du) + d1r * ddu + Vec3::new(0.0, 0.0, ddz);
        (
            Kin {
                t,
                p: Vec3::new(p.x, p.y, z),
                v,
                r: Rotation::from_axis_angle(&Vec3::z_axis(), yaw),
                omega: Vec3::new(0.0, 0.0, yaw_rate),
                accel: a,
            },
            yaw_acc,
        )
    }

    fn kin_pose(&self, t: f64) -> (Rotation, Vec3) {
        let (u, _, _) = self.param(t);
        let (p, d1, _) = self.planar(u);
        let rot0 = Rotation::from_axis_angle(&Vec3::z_axis(), -self.heading0);
        let p = rot0 * (p - self.origin);
        let d1r = rot0 * d1;
        let (z, _, _) = self.height(t);
        (
            Rotation::from_axis_angle(&Vec3::z_axis(), d1r.y.atan2(d1r.x)),
            Vec3::new(p.x, p.y, z),
        )
    }
}

fn closed_rate(speed: f64, t_eff: f64, loop_len: f64, loop_param: f64) -> f64 {
    if speed == 0.0 {
        return 0.0;
    }
    let loops = (speed * t_eff / loop_len).round().max(1.0);
    loops * loop_param / t_eff
}

fn gerono_length(a: f64) -> f64 {
    let n = 4000;
    let h = std::f64::consts::TAU / n as f64;
    (0..n)
        .map(|k| {
            let u = (k as f64 + 0.5) * h;
            a * (u.cos().powi(2) + (2.0 * u).cos().powi(2)).sqrt() * h
        })
        .sum()
}

/// Stance intervals and footholds of one leg.
#[derive(Debug, Clone)]
struct FootPlan {
    /// `(touchdown, lift-off, foothold)`; the first stance starts at -inf.
    stances: Vec<(f64, f64, Vec3)>,
}

impl FootPlan {
    fn position(&self, t: f64, step_height: f64) -> (Vec3, bool) {
        let idx = self.stances.partition_point(|s| s.0 <= t);
        let cur = &self.stances[idx.saturating_sub(1)];
        if t <= cur.1 || idx == self.stances.len() {
            return (cur.2, true);
        }
        let next = &self.stances[idx];
        let s = (t - cur.1) / (next.0 - cur.1);
        let c = smoothstep11(s);
        let mut p = cur.2 + (next.2 - cur.2) * c;
        p.z += step_height * (std::f64::consts::PI * s).sin().powi(4);
        (p, false)
    }
}

fn nominal_foot(leg: &LegParams, height: f64) -> Vec3 {
    Vec3::new(
        leg.hip_offset.x,
        leg.hip_offset.y + leg.side_sign * leg.abd_offset,
        leg.hip_offset.z - height,
    )
}

fn plan_feet(cfg: &GaitConfig, path: &BodyPath, legs: &[LegParams]) -> Result<Vec<FootPlan>> {
    let offsets = cfg.offsets(legs.len())?;
    let t_end = cfg.init_static + cfg.duration;
    let period = cfg.cycle_period;
    let duty = cfg.duty_factor;
    let mut plans = Vec::with_capacity(legs.len());
    for (leg, &offset) in legs.iter().zip(&offsets) {
        let nominal = nominal_foot(leg, cfg.body_height);
        let foothold = |t: f64| {
            let (r, p) = path.kin_pose(t);
            let mut f = p + r * nominal;
            f.z = -cfg.body_height;
            f
        };
        let mut stances = vec![(f64::NEG_INFINITY, f64::INFINITY, foothold(0.0))];
        if cfg.gait != Gait::Stand {
            let phase0 = offset.rem_euclid(1.0);
            let mut lift = path.t_walk + (duty - phase0).rem_euclid(1.0) * period;
            stances[0].1 = lift;
            while lift <= t_end + period {
                let touch = lift + (1.0 - duty) * period;
                let next_lift = touch + duty * period;
                stances.push((touch, next_lift, foothold(touch + 0.5 * duty * period)));
                lift = next_lift;
            }
        }
        plans.push(FootPlan { stances });
    }
    Ok(plans)
}

fn stencil<T, F>(f: F, t: f64, h: f64) -> (T, T)
where
    F: Fn(f64) -> T,
    T: std::ops::Add<Output = T>
        + std::ops::Sub<Output = T>
        + std::ops::Mul<f64, Output = T>
        + Copy,
{
    let (m2, m1, c, p1, p2) = (f(t - 2.0 * h), f(t - h), f(t), f(t + h), f(t + 2.0 * h));
    let d1 = ((p1 - m1) * 8.0 - (p2 - m2)) * (1.0 / (12.0 * h));
    let d2 = ((p1 + m1) * 16.0 - (p2 + m2) - c * 30.0) * (1.0 / (12.0 * h * h));
    (d1, d2)
}

/// Angular rate in the moving frame from centred rotation increments,
/// Richardson-extrapolated to fourth order.
fn body_rate_from_rotations<F: Fn(f64) -> Rotation>(r: F, t: f64, h: f64) -> Vec3 {
    let inc = |h: f64| log_so3(&(r(t - h).inverse() * r(t + h))) / (2.0 * h);
    (inc(h) * 4.0 - inc(2.0 * h)) / 3.0
}

/// Kinematic ground truth for `legs` (the true geometry) walking per `cfg`.
pub fn generate_truth(cfg: &GaitConfig, legs: &[LegParams], ext: &Extrinsics) -> Result<TruthLog> {
    cfg.validate()?;
    if legs.is_empty() {
        return Err(Error::Config("simulation needs at least one leg".into()));
    }
    for l in legs {
        l.validate()?;
    }
    let path = BodyPath::new(cfg);
    let plans = plan_feet(cfg, &path, legs)?;
    let n = cfg.n_samples();
    let n_legs = legs.len();
    let r_e = ext.rotation();
    let p_e = ext.translation();

    let mut log = TruthLog {
        t: Vec::with_capacity(n),
        body: Trajectory::with_capacity(n),
        body_imu: Trajectory::with_capacity(n),
        leg_imus: vec![Trajectory::with_capacity(n); n_legs],
        feet: vec![Vec::with_capacity(n); n_legs],
        contact: vec![Vec::with_capacity(n); n_legs],
        joints: vec![Vec::with_capacity(n); n_legs],
        biases: Vec::new(),
    };

    for k in 0..n {
        let t = k as f64 / cfg.fs;
        let (body, yaw_acc) = path.kin(t);
        log.t.push(t);
        log.body.push(&body);

        let w = body.omega;
        let alpha = Vec3::new(0.0, 0.0, yaw_acc);
        let lever = body.r * p_e;
        log.body_imu.push(&Kin {
            t,
            p: body.p + lever,
            v: body.v + w.cross(&lever),
            r: body.r * r_e,
            omega: r_e.inverse() * w,
            accel: body.accel + alpha.cross(&lever) + w.cross(&w.cross(&lever)),
        });

        for (i, leg) in legs.iter().enumerate() {
            let sim_err = |e: Error| Error::Simulation {
                leg: i,
                t,
                source: Box::new(e),
            };
            let (foot, stance) = plans[i].position(t, cfg.step_height);
            let rel_at = |s: f64| {
                let (rb, pb) = path.kin_pose(s);
                let f = plans[i].position(s, cfg.step_height).0;
                rb.inverse() * (f - pb)
            };
            let q = inverse_kinematics(&rel_at(t), leg).map_err(sim_err)?;
            let imu_at = |s: f64| {
                let q = inverse_kinematics(&rel_at(s), leg).unwrap_or(q);
                leg_imu_pose_unchecked(&q, leg)
            };
            let (r_bl, p_bl) = leg_imu_pose_unchecked(&q, leg);
            let (dp, _) = stencil(|s| imu_at(s).1, t, 1e-4);
            let (_, ddp) = stencil(|s| imu_at(s).1, t, 2.5e-4);
            let w_rel = body_rate_from_rotations(|s| imu_at(s).0, t, 1e-4);
            let rel = body.r * p_bl;
            let v_rel = body.r * dp;
            log.leg_imus[i].push(&Kin {
                t,
                p: body.p + rel,
                v: body.v + w.cross(&rel) + v_rel,
                r: body.r * r_bl,
                omega: r_bl.inverse() * w + w_rel,
                accel: body.accel
                    + w.cross(&w.cross(&rel))
                    + alpha.cross(&rel)
                    + w.cross(&v_rel) * 2.0
                    + body.r * ddp,
            });
            log.feet[i].push(foot);
            log.contact[i].push(stance);
            log.joints[i].push(q);
        }
    }
    Ok(log)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn gauss3(rng: &mut ChaCha8Rng) -> Vec3 {
    Vec3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

/// Error-free samples for `traj`.
///
/// Gyro samples are chosen so that the trapezoidal angular increment of each
/// sample pair equals the rotation between consecutive poses, which fixes
/// every sample from its predecessor; the recursion starts from the
/// continuous rate. Attitude then integrates back exactly and the remaining
/// velocity and position truncation errors stay bounded instead of growing
/// with the tilt error. Specific force is `R^T (a - g)` with the world
/// acceleration sharpened by `(-a[k-1] + 14 a[k] - a[k+1]) / 12`, which
/// cancels the leading trapezoidal truncation term of every increment.
pub fn ideal_samples(traj: &Trajectory, gravity: f64) -> (Vec<Vec3>, Vec<Vec3>) {
    let n = traj.len();
    let up = Vec3::new(0.0, 0.0, gravity);
    let mut gyro = Vec::with_capacity(n);
    if let Some(&w0) = traj.omega.first() {
        gyro.push(w0);
    }
    for k in 1..n {
        let dt = traj.t[k] - traj.t[k - 1];
        let w = log_so3(&(traj.r[k - 1].inverse() * traj.r[k])) * (2.0 / dt) - gyro[k - 1];
        gyro.push(w);
    }
    let accel = (0..n)
        .map(|k| {
            let a = &traj.accel;
            let sharp = if k == 0 || k + 1 == n {
                a[k]
            } else {
                (a[k] * 14.0 - a[k - 1] - a[k + 1]) / 12.0
            };
            traj.r[k].inverse() * (sharp + up)
        })
        .collect();
    (gyro, accel)
}

/// Noisy IMU stream and its true bias track for one trajectory.
///
/// Error-free samples come from [`ideal_samples`]. Biases are a constant turn-on offset plus
/// a first-order Gauss-Markov process started from its stationary law; white
/// noise has standard deviation `density * sqrt(fs)`.
pub fn synthesize_imu(
    traj: &Trajectory,
    noise: &ImuNoise,
    turn_on: (f64, f64),
    gravity: f64,
    seed: u64,
) -> (Vec<ImuSample>, BiasTrack) {
    let mut rng = stream_rng(seed, 0);
    let n = traj.len();
    let dt = if n > 1 { traj.t[1] - traj.t[0] } else { 1.0 };
    let fs = 1.0 / dt;
    let (sg, sa) = (noise.gyro_noise * fs.sqrt(), noise.accel_noise * fs.sqrt());
    let (phi_g, phi_a) = (
        (-dt / noise.gyro_bias_tau).exp(),
        (-dt / noise.accel_bias_tau).exp(),
    );
    let drive_g = noise.gyro_bias_sigma * (1.0 - phi_g * phi_g).sqrt();
    let drive_a = noise.accel_bias_sigma * (1.0 - phi_a * phi_a).sqrt();
    let bg0 = gauss3(&mut rng) * turn_on.0;
    let ba0 = gauss3(&mut rng) * turn_on.1;
    let mut gm_g = gauss3(&mut rng) * noise.gyro_bias_sigma;
    let mut gm_a = gauss3(&mut rng) * noise.accel_bias_sigma;

    let (omega, force) = ideal_samples(traj, gravity);
    let mut samples = Vec::with_capacity(n);
    let mut track = BiasTrack {
        gyro: Vec::with_capacity(n),
        accel: Vec::with_capacity(n),
    };
    for k in 0..n {
        if k > 0 {
            gm_g = gm_g * phi_g + gauss3(&mut rng) * drive_g;
            gm_a = gm_a * phi_a + gauss3(&mut rng) * drive_a;
        }
        let (bg, ba) = (bg0 + gm_g, ba0 + gm_a);
        let gyro = omega[k] + bg + gauss3(&mut rng) * sg;
        let accel = force[k] + ba + gauss3(&mut rng) * sa;
        samples.push(ImuSample::new(traj.t[k], gyro, accel));
        track.gyro.push(bg);
        track.accel.push(ba);
    }
    (samples, track)
}

/// Encoder readings: true joint angles plus white noise.
pub fn synthesize_encoders(truth: &TruthLog, sigma: f64, seed: u64) -> Vec<Vec<JointAngles>> {
    let mut rng = stream_rng(seed, 0);
    (0..truth.t.len())
        .map(|k| {
            truth
                .joints
                .iter()
                .map(|q| JointAngles::from_vector(&(q[k].to_vector() + gauss3(&mut rng) * sigma)))
                .collect()
        })
        .collect()
}

/// Everything needed for a simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default)]
    pub gait: GaitConfig,
    /// Nominal leg geometry.
    pub legs: Vec<LegParams>,
    #[serde(default)]
    pub extrinsics: Extrinsics,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub options: SimOptions,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
}

fn default_gravity() -> f64 {
    STANDARD_GRAVITY
}

impl SimConfig {
    pub fn quadruped(gait: GaitConfig) -> Self {
        Self {
            gait,
            legs: (0..4).map(LegParams::quadruped_default).collect(),
            extrinsics: Extrinsics::default(),
            noise: NoiseConfig::default(),
            options: SimOptions::default(),
            gravity: STANDARD_GRAVITY,
        }
    }

    /// Nominal geometry perturbed by `leg_param_sigma`.
    pub fn true_legs(&self) -> Vec<LegParams> {
        let sigma = if self.options.zero_noise {
            0.0
        } else {
            self.options.leg_param_sigma
        };
        if sigma == 0.0 {
            return self.legs.clone();
        }
        let mut rng = stream_rng(self.gait.seed, 100);
        self.legs
            .iter()
            .map(|l| {
                let mut t = l.clone();
                let d: f64 = rng.sample(StandardNormal);
                let e: f64 = rng.sample(StandardNormal);
                t.l_thigh += sigma * d;
                t.l_calf += sigma * e;
                t.lever_foot.z = l.lever_foot.z - sigma * e;
                t.hip_offset += gauss3(&mut rng) * sigma;
                t
            })
            .collect()
    }
}

/// A simulated run: truth plus sensor streams.
#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub truth: TruthLog,
    pub body_imu: Vec<ImuSample>,
    pub leg_imus: Vec<Vec<ImuSample>>,
    /// Time-major: one snapshot of every leg per sample.
    pub encoders: Vec<Vec<JointAngles>>,
}

/// Generate truth and sensor data for `cfg`.
pub fn simulate(cfg: &SimConfig) -> Result<SimOutput> {
    let mut truth = generate_truth(&cfg.gait, &cfg.true_legs(), &cfg.extrinsics)?;
    let seed = cfg.gait.seed;
    let quiet = cfg.options.zero_noise;
    let noise_for = |role: ImuRole| {
        let n = cfg.noise.for_imu(role);
        if quiet {
            n.scaled(0.0)
        } else {
            n
        }
    };
    let turn_on = if quiet {
        (0.0, 0.0)
    } else {
        (cfg.options.gyro_turn_on, cfg.options.accel_turn_on)
    };
    let mix = |stream: u64| seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream);
    let (body_imu, bias) =
        synthesize_imu(&truth.body_imu, &noise_for(ImuRole::Body), turn_on, cfg.gravity, mix(1));
    let mut biases = vec![bias];
    let mut leg_imus = Vec::with_capacity(truth.n_legs());
    for (i, traj) in truth.leg_imus.iter().enumerate() {
        let (s, b) = synthesize_imu(
            traj,
            &noise_for(ImuRole::Leg(i)),
            turn_on,
            cfg.gravity,
            mix(2 + i as u64),
        );
        leg_imus.push(s);
        biases.push(b);
    }
    truth.biases = biases;
    let sigma_enc = if quiet { 0.0 } else { cfg.noise.sigma_encoder };
    let encoders = synthesize_encoders(&truth, sigma_enc, mix(50));
    Ok(SimOutput {
        truth,
        body_imu,
        leg_imus,
        encoders,
    })
}
