//! Reference estimators: single Leg-IMU zero-velocity navigation (Foot-INS)
//! and Body-IMU plus encoder leg odometry (LegOdom).

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};

use crate::ekf::covariance::{self, BlockTransition, SparseJacobian};
use crate::ekf::jacobians::{self, Vec15, BLOCK, IPHI};
use crate::ekf::{
    Ekf, Epoch, FilterConfig, ImuNoise, ImuRole, UpdateEvent, UpdateKind, MAX_ATTITUDE_CORRECTION,
};
use crate::error::{Error, Result};
use crate::kinematics::{fk_jacobian, forward_kinematics, JointAngles};
use crate::math_nav::{gravity_vector, skew, EulerAngles, Rotation, Vec3};
use crate::strapdown::{correct_sample, mechanize, ImuSample, NavState};

/// Estimator selection, parsed from `doglegs`, `legodom` or `footins:<i>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    DogLegs,
    LegOdom,
    FootIns(usize),
}

impl EstimatorKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "doglegs" => Ok(Self::DogLegs),
            "legodom" => Ok(Self::LegOdom),
            _ => s
                .strip_prefix("footins:")
                .and_then(|i| i.parse().ok())
                .map(Self::FootIns)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "unknown estimator {s:?}; expected doglegs, legodom or footins:<leg>"
                    ))
                }),
        }
    }

    pub fn validate(&self, n_legs: usize) -> Result<()> {
        match self {
            Self::FootIns(i) if *i >= n_legs => Err(Error::Config(format!(
                "footins:{i} needs leg index < {n_legs}"
            ))),
            _ => Ok(()),
        }
    }
}

impl std::fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::DogLegs => f.write_str("doglegs"),
            Self::LegOdom => f.write_str("legodom"),
            Self::FootIns(i) => write!(f, "footins:{i}"),
        }
    }
}

/// Single Leg-IMU filter: the DogLegs machinery with one block and no
/// relative-position updates.
#[derive(Debug, Clone)]
pub struct FootIns {
    pub ekf: Ekf,
    pub leg: usize,
}

impl FootIns {
    pub fn initialize(
        cfg: &FilterConfig,
        leg: usize,
        body_static: &[ImuSample],
        leg_static: &[Vec<ImuSample>],
        joints_static: &[Vec<JointAngles>],
        t0: f64,
    ) -> Result<Self> {
        if leg >= cfg.n_legs {
            return Err(Error::Config(format!("Foot-INS leg {leg} out of range")));
        }
        let mut cfg = cfg.clone();
        cfg.enable_relpos = false;
        let ekf = Ekf::initialize(cfg, vec![ImuRole::Leg(leg)], body_static, leg_static, joints_static, t0)?;
        Ok(Self { ekf, leg })
    }

    pub fn step(&mut self, epoch: &Epoch) -> Result<(f64, f64)> {
        self.ekf.step(epoch)
    }

    /// Replace roll and pitch of the Leg-IMU by externally estimated values,
    /// keeping the filter's own yaw.
    pub fn set_roll_pitch(&mut self, roll: f64, pitch: f64) {
        let nav = &mut self.ekf.state.nav[0];
        let yaw = EulerAngles::from_rotation(&nav.r).yaw;
        nav.r = EulerAngles::new(roll, pitch, yaw).to_rotation();
    }

    pub fn nav(&self) -> &NavState {
        &self.ekf.state.nav[0]
    }

    /// Position and attitude one-sigmas.
    pub fn sigmas(&self) -> (Vec3, Vec3, Vec3) {
        let s = self.ekf.state.sigmas();
        let v = |o: usize| Vec3::new(s[o], s[o + 1], s[o + 2]);
        (v(0), v(3), v(6))
    }
}

/// Leg odometry: Body-IMU error state plus a world foot position for every
/// leg in contact. A foot is added at touchdown from the body pose and the
/// encoders, constrained through the encoders while in contact and dropped at
/// lift-off.
#[derive(Debug, Clone)]
pub struct LegOdom {
    cfg: FilterConfig,
    pub nav: NavState,
    /// Body block first, then three rows per leg.
    pub cov: DMatrix<f64>,
    pub feet: Vec<Option<Vec3>>,
    noise: ImuNoise,
    gravity: Vec3,
    gate: f64,
    last_raw: Option<ImuSample>,
    last_gyro: Vec3,
    epoch: usize,
    t: f64,
    events: Vec<UpdateEvent>,
}

impl LegOdom {
    pub fn initialize(cfg: &FilterConfig, body_static: &[ImuSample], t0: f64) -> Result<Self> {
        let seed = Ekf::initialize(cfg.clone(), vec![ImuRole::Body], body_static, &[], &[], t0)?;
        let n = BLOCK + 3 * cfg.n_legs;
        let mut cov = DMatrix::zeros(n, n);
        cov.view_mut((0, 0), (BLOCK, BLOCK)).copy_from(&seed.state.cov);
        Ok(Self {
            nav: seed.state.nav[0],
            cov,
            feet: vec![None; cfg.n_legs],
            noise: cfg.noise.for_imu(ImuRole::Body),
            gravity: gravity_vector(cfg.gravity),
            gate: cfg.gate_threshold(),
            last_raw: None,
            last_gyro: Vec3::zeros(),
            epoch: 0,
            t: t0,
            events: Vec::new(),
            cfg: cfg.clone(),
        })
    }

    pub fn events(&self) -> &[UpdateEvent] {
        &self.events
    }

    fn foot_offset(leg: usize) -> usize {
        BLOCK + 3 * leg
    }

    fn propagate(&mut self, raw: &ImuSample) -> Result<()> {
        let Some(prev_raw) = self.last_raw.replace(*raw) else {
            self.last_gyro = raw.gyro - self.nav.bg;
            self.t = raw.t;
            return Ok(());
        };
        let prev = correct_sample(&prev_raw, &self.nav.bg, &self.nav.ba);
        let cur = correct_sample(raw, &self.nav.bg, &self.nav.ba);
        let dt = cur.t - prev.t;
        let new = mechanize(&self.nav, &prev, &cur, &self.gravity)?;
        let phi = jacobians::transition_matrix(&self.nav.r, &new.r, &prev, &cur, &self.noise);
        let q = jacobians::discrete_noise(&phi, &self.noise, dt);
        let mut blocks = vec![BlockTransition {
            offset: 0,
            phi: Some(DMatrix::from_column_slice(BLOCK, BLOCK, phi.as_slice())),
            q: DMatrix::from_column_slice(BLOCK, BLOCK, q.as_slice()),
        }];
        let slip = self.cfg.noise.foot_slip.powi(2) * dt;
        for (i, f) in self.feet.iter().enumerate() {
            let q = if f.is_some() { slip } else { 0.0 };
            blocks.push(BlockTransition {
                offset: Self::foot_offset(i),
                phi: None,
                q: DMatrix::identity(3, 3) * q,
            });
        }
        covariance::propagate_blocks(&mut self.cov, &blocks);
        self.nav = new;
        self.last_gyro = cur.gyro;
        self.t = cur.t;
        self.epoch += 1;
        Ok(())
    }

    fn encoder_noise(&self, leg: usize, q: &JointAngles) -> Result<(Vec3, Matrix3<f64>)> {
        let params = &self.cfg.legs[leg];
        let z = forward_kinematics(q, params)?;
        let j = fk_jacobian(q, params)?;
        let n = &self.cfg.noise;
        let r = j * j.transpose() * n.sigma_encoder.powi(2)
            + Matrix3::identity() * n.sigma_relpos_floor.powi(2);
        Ok((z, r))
    }

    /// Add the foot of `leg` to the state from the current body pose.
    fn touchdown(&mut self, leg: usize, q: &JointAngles) -> Result<()> {
        let (z, r) = self.encoder_noise(leg, q)?;
        let r_e = self.cfg.extrinsics.rotation();
        let p_e = self.cfg.extrinsics.translation();
        let m = self.nav.r.matrix() * r_e.matrix().transpose();
        let c = m * (z - p_e);
        let foot = self.nav.p + c;
        // d foot / d (body error): identity on position, skew(R c) on attitude.
        let mut j = DMatrix::zeros(3, BLOCK);
        j.view_mut((0, 0), (3, 3)).copy_from(&Matrix3::identity());
        j.view_mut((0, IPHI), (3, 3)).copy_from(&skew(&c));
        let o = Self::foot_offset(leg);
        let n = self.cov.nrows();
        let body_rows = self.cov.view((0, 0), (BLOCK, n)).into_owned();
        let cross = &j * &body_rows;
        let pbb = self.cov.view((0, 0), (BLOCK, BLOCK)).into_owned();
        let pff = &j * pbb * j.transpose() + DMatrix::from_column_slice(3, 3, (m * r * m.transpose()).as_slice());
        self.cov.view_mut((o, 0), (3, n)).copy_from(&cross);
        self.cov.view_mut((0, o), (n, 3)).copy_from(&cross.transpose());
        self.cov.view_mut((o, o), (3, 3)).copy_from(&pff);
        covariance::symmetrize(&mut self.cov);
        self.feet[leg] = Some(foot);
        Ok(())
    }

    fn liftoff(&mut self, leg: usize) {
        let o = Self::foot_offset(leg);
        let n = self.cov.nrows();
        self.cov.view_mut((o, 0), (3, n)).fill(0.0);
        self.cov.view_mut((0, o), (n, 3)).fill(0.0);
        self.feet[leg] = None;
    }

    fn foot_update(&mut self, leg: usize, q: &JointAngles) -> Result<UpdateEvent> {
        let foot = self.feet[leg].expect("foot in state");
        let (z, r) = self.encoder_noise(leg, q)?;
        let r_e = self.cfg.extrinsics.rotation();
        let p_e = self.cfg.extrinsics.translation();
        let (pred, hb, a) = jacobians::foot_point_model(&self.nav, &foot, &r_e, &p_e);
        let jac = SparseJacobian::new(3)
            .with_block(0, DMatrix::from_column_slice(3, BLOCK, hb.as_slice()))
            .with_block(Self::foot_offset(leg), DMatrix::from_column_slice(3, 3, a.as_slice()));
        let residual = pred - z;
        let res = DVector::from_column_slice(residual.as_slice());
        let r = DMatrix::from_column_slice(3, 3, r.as_slice());
        let out = covariance::joseph_update(&mut self.cov, &jac, &r, &res, Some(self.gate))?;
        if out.accepted {
            self.apply_corrections(&out.dx)?;
        }
        let ev = UpdateEvent {
            epoch: self.epoch,
            t: self.t,
            imu: ImuRole::Leg(leg),
            kind: UpdateKind::RelPos,
            innovation: [residual.x, residual.y, residual.z],
            mahalanobis2: out.mahalanobis2,
            accepted: out.accepted,
        };
        self.events.push(ev);
        Ok(ev)
    }

    fn apply_corrections(&mut self, dx: &DVector<f64>) -> Result<()> {
        let body = Vec15::from_iterator(dx.rows(0, BLOCK).iter().copied());
        let dphi = body.fixed_rows::<3>(IPHI).norm();
        if !(dphi <= MAX_ATTITUDE_CORRECTION) {
            return Err(Error::Divergence(format!("attitude correction {dphi:.3} rad on body")));
        }
        self.nav = jacobians::apply_correction(&self.nav, &body);
        for (i, f) in self.feet.iter_mut().enumerate() {
            if let Some(p) = f {
                let o = Self::foot_offset(i);
                *p -= Vec3::new(dx[o], dx[o + 1], dx[o + 2]);
            }
        }
        Ok(())
    }

    /// Propagate with the Body-IMU sample of `epoch` and process contacts.
    pub fn step(&mut self, epoch: &Epoch) -> Result<(f64, f64)> {
        let start = std::time::Instant::now();
        self.propagate(&epoch.body)?;
        let predicted = start.elapsed().as_secs_f64();
        for leg in 0..self.cfg.n_legs {
            let contact = epoch.contact.get(leg).copied().unwrap_or(false);
            match (contact, self.feet[leg].is_some()) {
                (true, false) => self.touchdown(leg, &epoch.joints[leg])?,
                (true, true) => {
                    self.foot_update(leg, &epoch.joints[leg])?;
                }
                (false, true) => self.liftoff(leg),
                (false, false) => {}
            }
        }
        covariance::check_health(&self.cov)?;
        let total = start.elapsed().as_secs_f64();
        Ok((predicted, total - predicted))
    }

    /// Body-frame pose from the Body-IMU state.
    pub fn body_pose(&self) -> (Vec3, Vec3, Rotation) {
        let r_e = self.cfg.extrinsics.rotation();
        let p_e = self.cfg.extrinsics.translation();
        let lever = -(r_e.inverse() * p_e);
        let p = self.nav.p + self.nav.r * lever;
        let v = self.nav.v + self.nav.r * self.last_gyro.cross(&lever);
        (p, v, self.nav.r * r_e.inverse())
    }

    /// Position, velocity and attitude one-sigmas of the Body-IMU.
    pub fn sigmas(&self) -> (Vec3, Vec3, Vec3) {
        let d = |o: usize| Vec3::new(self.cov[(o, o)], self.cov[(o + 1, o + 1)], self.cov[(o + 2, o + 2)]).map(|x| x.max(0.0).sqrt());
        (d(0), d(3), d(6))
    }
}
