//! Multi-IMU error-state Kalman filter.
//!
//! One 15-dimensional error block per IMU. Block order follows the filter's
//! roles; the full estimator puts the Body-IMU first and the legs after it.
//! Each IMU is mechanized independently; the blocks are coupled only through
//! the relative-position measurement between the Body-IMU and a Leg-IMU.

pub mod config;
pub mod covariance;
pub mod jacobians;

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};

pub use config::{Extrinsics, FilterConfig, ImuNoise, ImuRole, InitConfig, NoiseConfig};
use covariance::{BlockTransition, SparseJacobian};
use jacobians::{Mat15, Vec15, BLOCK};

use crate::contact::detect_all_static;
use crate::error::{Error, Result};
use crate::kinematics::{fk_jacobian, forward_kinematics, leg_imu_position, JointAngles};
use crate::math_nav::{gravity_vector, static_level_align, EulerAngles, Rotation, Vec3};
use crate::strapdown::{correct_sample, mechanize, ImuSample, NavState};

/// Largest attitude correction accepted in one update, rad.
pub const MAX_ATTITUDE_CORRECTION: f64 = 0.5;

/// Synchronized sensor data at one filter epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub t: f64,
    pub body: ImuSample,
    /// Raw Leg-IMU samples, one per leg.
    pub legs: Vec<ImuSample>,
    pub joints: Vec<JointAngles>,
    pub contact: Vec<bool>,
    pub body_static: bool,
}

impl Epoch {
    pub fn sample(&self, role: ImuRole) -> &ImuSample {
        match role {
            ImuRole::Body => &self.body,
            ImuRole::Leg(i) => &self.legs[i],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateKind {
    Zupt,
    RelPos,
}

/// One measurement update, accepted or gated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UpdateEvent {
    /// Index of the epoch within the run, counted from the first sample.
    pub epoch: usize,
    pub t: f64,
    pub imu: ImuRole,
    pub kind: UpdateKind,
    pub innovation: [f64; 3],
    pub mahalanobis2: f64,
    pub accepted: bool,
}

/// Initial world pose of one IMU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub r: Rotation,
    pub p: Vec3,
}

/// Nominal states and joint error covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub t: f64,
    pub roles: Vec<ImuRole>,
    pub nav: Vec<NavState>,
    pub cov: DMatrix<f64>,
    /// One per role, fixed at construction.
    pub anchors: Vec<Anchor>,
}

impl FilterState {
    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn index_of(&self, role: ImuRole) -> Option<usize> {
        self.roles.iter().position(|&r| r == role)
    }

    pub fn block(&self, idx: usize) -> Mat15 {
        let o = idx * BLOCK;
        self.cov.fixed_view::<BLOCK, BLOCK>(o, o).into_owned()
    }

    /// One-sigma of every error-state component.
    pub fn sigmas(&self) -> DVector<f64> {
        self.cov.diagonal().map(|v| v.max(0.0).sqrt())
    }
}

/// Mean specific force and rate over a static window.
fn window_means(window: &[ImuSample]) -> Result<(Vec3, Vec3)> {
    if window.is_empty() {
        return Err(Error::Config("empty static window".into()));
    }
    let n = window.len() as f64;
    let f = window.iter().fold(Vec3::zeros(), |a, s| a + s.accel) / n;
    let w = window.iter().fold(Vec3::zeros(), |a, s| a + s.gyro) / n;
    Ok((f, w))
}

fn mean_joints(window: &[Vec<JointAngles>], leg: usize) -> Result<JointAngles> {
    if window.is_empty() {
        return Err(Error::Config("empty static encoder window".into()));
    }
    let mut acc = Vec3::zeros();
    for snap in window {
        let q = snap
            .get(leg)
            .ok_or_else(|| Error::Config(format!("encoder snapshot without leg {leg}")))?;
        acc += q.to_vector();
    }
    Ok(JointAngles::from_vector(&(acc / window.len() as f64)))
}

/// Error-state EKF over a set of IMUs.
#[derive(Debug, Clone)]
pub struct Ekf {
    cfg: FilterConfig,
    pub state: FilterState,
    noise: Vec<ImuNoise>,
    gravity: Vec3,
    gate: f64,
    last_raw: Vec<Option<ImuSample>>,
    last_gyro: Vec<Vec3>,
    initial_bias: Vec<(Vec3, Vec3)>,
    epoch: usize,
    events: Vec<UpdateEvent>,
}

impl Ekf {
    /// Filter from explicit nominal states and covariance.
    pub fn from_states(
        cfg: FilterConfig,
        roles: Vec<ImuRole>,
        nav: Vec<NavState>,
        cov: DMatrix<f64>,
        t: f64,
    ) -> Result<Self> {
        cfg.validate()?;
        if roles.is_empty() || roles.len() != nav.len() {
            return Err(Error::Config("one nominal state per IMU role required".into()));
        }
        let n = roles.len() * BLOCK;
        if cov.nrows() != n || cov.ncols() != n {
            return Err(Error::Config(format!("covariance must be {n}x{n}")));
        }
        for (i, r) in roles.iter().enumerate() {
            if let ImuRole::Leg(l) = r {
                if *l >= cfg.n_legs {
                    return Err(Error::Config(format!("role leg{l} exceeds n_legs")));
                }
            }
            if roles[..i].contains(r) {
                return Err(Error::Config(format!("duplicate role {r}")));
            }
        }
        if roles[1..].contains(&ImuRole::Body) {
            return Err(Error::Config("the Body-IMU must be the first block".into()));
        }
        covariance::check_health(&cov)?;
        let noise = roles.iter().map(|&r| cfg.noise.for_imu(r)).collect();
        let k = roles.len();
        let anchors = nav.iter().map(|n| Anchor { r: n.r, p: n.p }).collect();
        Ok(Self {
            gravity: gravity_vector(cfg.gravity),
            gate: cfg.gate_threshold(),
            noise,
            last_raw: vec![None; k],
            last_gyro: vec![Vec3::zeros(); k],
            initial_bias: nav.iter().map(|n| (n.bg, n.ba)).collect(),
            epoch: 0,
            events: Vec::new(),
            state: FilterState {
                t,
                roles,
                nav,
                cov,
                anchors,
            },
            cfg,
        })
    }

    /// Static alignment from windows recorded while the robot stands still.
    ///
    /// Body roll and pitch come from gravity, body yaw is zero and the body
    /// origin is the world origin. Each Leg-IMU takes roll and pitch from its
    /// own accelerometer, zero yaw and its position from forward kinematics.
    /// Gyro biases are the mean rates; accelerometer biases keep the residual
    /// after leveling.
    pub fn initialize(
        cfg: FilterConfig,
        roles: Vec<ImuRole>,
        body_static: &[ImuSample],
        leg_static: &[Vec<ImuSample>],
        joints_static: &[Vec<JointAngles>],
        t0: f64,
    ) -> Result<Self> {
        cfg.validate()?;
        let r_e = cfg.extrinsics.rotation();
        let p_e = cfg.extrinsics.translation();
        let (f_bi, w_bi) = window_means(body_static)?;
        let (roll, pitch) = static_level_align(&(r_e * f_bi), cfg.gravity).map_err(|e| {
            Error::InitImu {
                imu: ImuRole::Body.key(),
                source: Box::new(e),
            }
        })?;
        let r_wb = EulerAngles::new(roll, pitch, 0.0).to_rotation();
        let up = Vec3::new(0.0, 0.0, cfg.gravity);

        let mut nav = Vec::with_capacity(roles.len());
        let mut diag = Vec::with_capacity(roles.len() * BLOCK);
        let ini = &cfg.init;
        for &role in &roles {
            let (state, sigma_p, sigma_yaw) = match role {
                ImuRole::Body => {
                    let r = r_wb * r_e;
                    let mut s = NavState::at_rest(r_wb * p_e, r);
                    s.bg = w_bi;
                    s.ba = f_bi - r.inverse() * up;
                    (s, ini.sigma_p_body, ini.sigma_yaw_body)
                }
                ImuRole::Leg(i) => {
                    let window = leg_static
                        .get(i)
                        .ok_or_else(|| Error::Config(format!("no static window for leg {i}")))?;
                    let (f, w) = window_means(window)?;
                    let wrap = |e| Error::InitImu {
                        imu: role.key(),
                        source: Box::new(e),
                    };
                    let (lr, lp) = static_level_align(&f, cfg.gravity).map_err(wrap)?;
                    let r = EulerAngles::new(lr, lp, 0.0).to_rotation();
                    let q = mean_joints(joints_static, i)?;
                    let p_b = leg_imu_position(&q, &cfg.legs[i]).map_err(wrap)?;
                    let mut s = NavState::at_rest(r_wb * p_b, r);
                    s.bg = w;
                    s.ba = f - r.inverse() * up;
                    (s, ini.sigma_p_leg, ini.sigma_yaw_leg)
                }
            };
            nav.push(state);
            let rp = ini.sigma_roll_pitch;
            diag.extend_from_slice(&[sigma_p; 3]);
            diag.extend_from_slice(&[ini.sigma_v; 3]);
            diag.extend_from_slice(&[rp, rp, sigma_yaw]);
            diag.extend_from_slice(&[ini.sigma_bg; 3]);
            diag.extend_from_slice(&[ini.sigma_ba; 3]);
        }
        let cov = DMatrix::from_diagonal(&DVector::from_iterator(
            diag.len(),
            diag.iter().map(|s| s * s),
        ));
        Self::from_states(cfg, roles, nav, cov, t0)
    }

    pub fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    pub fn events(&self) -> &[UpdateEvent] {
        &self.events
    }

    pub fn take_events(&mut self) -> Vec<UpdateEvent> {
        std::mem::take(&mut self.events)
    }

    /// Bias-corrected rate of IMU `idx` at the latest sample.
    pub fn last_gyro(&self, idx: usize) -> Vec3 {
        self.last_gyro[idx]
    }

    /// Advance every IMU with one raw sample each (in role order).
    ///
    /// Both ends of each step are corrected with the current bias estimates.
    /// The first call only latches the samples.
    pub fn propagate(&mut self, samples: &[ImuSample]) -> Result<()> {
        let k = self.state.roles.len();
        if samples.len() != k {
            return Err(Error::Config(format!("{} samples for {k} IMUs", samples.len())));
        }
        if self.last_raw.iter().any(Option::is_none) {
            for (i, s) in samples.iter().enumerate() {
                self.last_raw[i] = Some(*s);
                self.last_gyro[i] = s.gyro - self.state.nav[i].bg;
            }
            self.state.t = samples[0].t;
            self.epoch = 0;
            return Ok(());
        }
        let mut blocks = Vec::with_capacity(k);
        let mut next = Vec::with_capacity(k);
        for (i, cur_raw) in samples.iter().enumerate() {
            let nav = &self.state.nav[i];
            let prev_raw = self.last_raw[i].expect("latched");
            let prev = correct_sample(&prev_raw, &nav.bg, &nav.ba);
            let cur = correct_sample(cur_raw, &nav.bg, &nav.ba);
            let new = mechanize(nav, &prev, &cur, &self.gravity)?;
            let phi = jacobians::transition_matrix(&nav.r, &new.r, &prev, &cur, &self.noise[i]);
            let q = jacobians::discrete_noise(&phi, &self.noise[i], cur.t - prev.t);
            blocks.push(BlockTransition {
                offset: i * BLOCK,
                phi: Some(DMatrix::from_column_slice(BLOCK, BLOCK, phi.as_slice())),
                q: DMatrix::from_column_slice(BLOCK, BLOCK, q.as_slice()),
            });
            next.push((new, cur.gyro));
        }
        covariance::propagate_blocks(&mut self.state.cov, &blocks);
        for (i, (new, gyro)) in next.into_iter().enumerate() {
            self.state.nav[i] = new;
            self.last_gyro[i] = gyro;
            self.last_raw[i] = Some(samples[i]);
        }
        self.state.t = samples[0].t;
        self.epoch += 1;
        Ok(())
    }

    /// Subtract an estimated error from every nominal state.
    pub fn apply_corrections(&mut self, dx: &DVector<f64>) -> Result<()> {
        if dx.len() != self.state.dim() {
            return Err(Error::Config("correction has the wrong dimension".into()));
        }
        for i in 0..self.state.roles.len() {
            let block = Vec15::from_iterator(dx.rows(i * BLOCK, BLOCK).iter().copied());
            let dphi = block.fixed_rows::<3>(jacobians::IPHI).norm();
            if !(dphi <= MAX_ATTITUDE_CORRECTION) {
                return Err(Error::Divergence(format!(
                    "attitude correction {dphi:.3} rad on {}",
                    self.state.roles[i]
                )));
            }
        }
        for i in 0..self.state.roles.len() {
            let block = Vec15::from_iterator(dx.rows(i * BLOCK, BLOCK).iter().copied());
            self.state.nav[i] = jacobians::apply_correction(&self.state.nav[i], &block);
        }
        Ok(())
    }

    fn update(
        &mut self,
        role: ImuRole,
        kind: UpdateKind,
        residual: Vec3,
        h: SparseJacobian,
        r: Matrix3<f64>,
    ) -> Result<UpdateEvent> {
        let res = DVector::from_column_slice(residual.as_slice());
        let r = DMatrix::from_column_slice(3, 3, r.as_slice());
        let out = covariance::joseph_update(&mut self.state.cov, &h, &r, &res, Some(self.gate))?;
        if out.accepted {
            self.apply_corrections(&out.dx)?;
        } else {
            log::debug!(
                "{kind:?} on {role} gated at t = {:.3}: d2 = {:.1}",
                self.state.t,
                out.mahalanobis2
            );
        }
        let ev = UpdateEvent {
            epoch: self.epoch,
            t: self.state.t,
            imu: role,
            kind,
            innovation: [residual.x, residual.y, residual.z],
            mahalanobis2: out.mahalanobis2,
            accepted: out.accepted,
        };
        self.events.push(ev);
        Ok(ev)
    }

    /// Zero-velocity update of the point `lever` (IMU frame) of IMU `idx`.
    pub fn zupt_update(&mut self, idx: usize, lever: &Vec3) -> Result<UpdateEvent> {
        let (pred, h) = jacobians::zupt_model(&self.state.nav[idx], &self.last_gyro[idx], lever);
        let hd = DMatrix::from_column_slice(3, BLOCK, h.as_slice());
        let jac = SparseJacobian::new(3).with_block(idx * BLOCK, hd);
        let r = Matrix3::identity() * self.cfg.noise.sigma_zupt.powi(2);
        self.update(self.state.roles[idx], UpdateKind::Zupt, pred, jac, r)
    }

    /// Body-frame foot position measured by the encoders of `leg`, applied to
    /// the Body-IMU block and the Leg-IMU block `idx`.
    pub fn relpos_update(&mut self, idx: usize, q: &JointAngles) -> Result<UpdateEvent> {
        let ImuRole::Leg(leg) = self.state.roles[idx] else {
            return Err(Error::Config("relative position needs a Leg-IMU block".into()));
        };
        let body = self
            .state
            .index_of(ImuRole::Body)
            .ok_or_else(|| Error::Config("relative position needs the Body-IMU".into()))?;
        let params = &self.cfg.legs[leg];
        let z = forward_kinematics(q, params)?;
        let j = fk_jacobian(q, params)?;
        let r_e = self.cfg.extrinsics.rotation();
        let p_e = self.cfg.extrinsics.translation();
        let (pred, hb, hl) = jacobians::relpos_model(
            &self.state.nav[body],
            &self.state.nav[idx],
            &params.lever_foot,
            &r_e,
            &p_e,
        );
        let noise = &self.cfg.noise;
        let r = j * j.transpose() * noise.sigma_encoder.powi(2)
            + Matrix3::identity() * noise.sigma_relpos_floor.powi(2);
        let jac = SparseJacobian::new(3)
            .with_block(body * BLOCK, DMatrix::from_column_slice(3, BLOCK, hb.as_slice()))
            .with_block(idx * BLOCK, DMatrix::from_column_slice(3, BLOCK, hl.as_slice()));
        self.update(self.state.roles[idx], UpdateKind::RelPos, pred - z, jac, r)
    }

    /// Propagate with one epoch and apply every applicable update.
    ///
    /// Returns the time spent in prediction and in updates, in seconds.
    pub fn step(&mut self, epoch: &Epoch) -> Result<(f64, f64)> {
        let start = std::time::Instant::now();
        let samples: Vec<ImuSample> = self
            .state
            .roles
            .iter()
            .map(|&r| *epoch.sample(r))
            .collect();
        self.propagate(&samples)?;
        let predicted = start.elapsed().as_secs_f64();

        let roles = self.state.roles.clone();
        let mut zupted = vec![false; roles.len()];
        for (idx, role) in roles.iter().enumerate() {
            let ImuRole::Leg(i) = *role else { continue };
            if !epoch.contact.get(i).copied().unwrap_or(false) {
                continue;
            }
            if self.cfg.enable_zupt {
                let lever = self.cfg.legs[i].lever_foot;
                self.zupt_update(idx, &lever)?;
                zupted[idx] = true;
            }
            if self.cfg.enable_relpos && roles[0] == ImuRole::Body {
                self.relpos_update(idx, &epoch.joints[i])?;
            }
        }
        let mut flags = epoch.contact.clone();
        flags.push(epoch.body_static);
        if self.cfg.enable_all_static && detect_all_static(&flags) {
            for idx in 0..roles.len() {
                if !zupted[idx] {
                    self.zupt_update(idx, &Vec3::zeros())?;
                }
            }
        }
        covariance::check_health(&self.state.cov)?;
        self.check_biases()?;
        let total = start.elapsed().as_secs_f64();
        Ok((predicted, total - predicted))
    }

    /// Biases may not wander more than ten of their prior sigmas from the
    /// initial estimate.
    fn check_biases(&self) -> Result<()> {
        let ini = &self.cfg.init;
        for (i, nav) in self.state.nav.iter().enumerate() {
            let (bg0, ba0) = self.initial_bias[i];
            let n = &self.noise[i];
            let lim_g = 10.0 * n.gyro_bias_sigma.max(ini.sigma_bg);
            let lim_a = 10.0 * n.accel_bias_sigma.max(ini.sigma_ba);
            let (dg, da) = ((nav.bg - bg0).amax(), (nav.ba - ba0).amax());
            if !(dg <= lim_g && da <= lim_a) {
                return Err(Error::Divergence(format!(
                    "{} bias drifted by {dg:.2e} rad/s, {da:.2e} m/s^2",
                    self.state.roles[i]
                )));
            }
        }
        Ok(())
    }

    /// Body-frame pose and velocity derived from the Body-IMU block.
    pub fn body_pose(&self) -> Option<(Vec3, Vec3, Rotation)> {
        let i = self.state.index_of(ImuRole::Body)?;
        let nav = &self.state.nav[i];
        let r_e = self.cfg.extrinsics.rotation();
        let p_e = self.cfg.extrinsics.translation();
        let r_wb = nav.r * r_e.inverse();
        let lever = -(r_e.inverse() * p_e);
        let p = nav.p + nav.r * lever;
        let v = nav.v + nav.r * self.last_gyro[i].cross(&lever);
        Some((p, v, r_wb))
    }
}
