//! Running an estimator over a dataset: epoch alignment, contact flags,
//! initialization, filtering and timing.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::baselines::{EstimatorKind, FootIns, LegOdom};
use crate::contact::{calibrate_gamma_from_rest, calibrate_gamma_from_schedule, detect_stream, GlrtConfig};
use crate::dataset_io::{ContactSource, Dataset, LegRecord, RunConfig, StateRecord};
use crate::ekf::{Ekf, Epoch, FilterConfig, ImuRole, UpdateEvent};
use crate::error::{Error, Result};
use crate::kinematics::JointAngles;
use crate::math_nav::{EulerAngles, Vec3};
use crate::strapdown::ImuSample;

/// Sensor data of one Body-IMU tick, other streams picked by nearest time
/// and restamped to the Body-IMU clock.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSample {
    pub body: ImuSample,
    pub legs: Vec<ImuSample>,
    pub joints: Vec<JointAngles>,
    /// From the dataset's contact log, when it has one.
    pub schedule: Option<Vec<bool>>,
}

/// Index of the element of sorted `times` nearest to `t`, scanning forward
/// from `hint`.
fn nearest_from(times: impl Fn(usize) -> f64, len: usize, t: f64, hint: &mut usize) -> usize {
    while *hint + 1 < len && (times(*hint + 1) - t).abs() <= (times(*hint) - t).abs() {
        *hint += 1;
    }
    *hint
}

/// Pair every Body-IMU sample inside the common time span of all streams
/// with the nearest sample of every other stream.
pub fn align_epochs(ds: &Dataset) -> Result<Vec<AlignedSample>> {
    if ds.body_imu.is_empty() || ds.encoders.is_empty() || ds.leg_imus.iter().any(Vec::is_empty) {
        return Err(Error::Dataset("empty stream".into()));
    }
    let n = ds.n_legs();
    let tol = 0.5 / ds.fs + 1e-9;
    let mut start = ds.encoders[0].t;
    let mut end = ds.encoders.last().expect("non-empty").t;
    for s in &ds.leg_imus {
        start = start.max(s[0].t);
        end = end.min(s.last().expect("non-empty").t);
    }
    if let Some(c) = &ds.contact {
        if c.is_empty() {
            return Err(Error::Dataset("empty contact log".into()));
        }
        start = start.max(c[0].t);
        end = end.min(c.last().expect("non-empty").t);
    }
    let mut leg_hint = vec![0usize; n];
    let mut enc_hint = 0usize;
    let mut con_hint = 0usize;
    let mut out = Vec::with_capacity(ds.body_imu.len());
    for b in &ds.body_imu {
        if b.t < start - tol || b.t > end + tol {
            continue;
        }
        let check = |t: f64, what: &str| {
            if (t - b.t).abs() > tol {
                Err(Error::Dataset(format!(
                    "{what} has no sample within half a period of t = {:.6} s",
                    b.t
                )))
            } else {
                Ok(())
            }
        };
        let mut legs = Vec::with_capacity(n);
        for (i, s) in ds.leg_imus.iter().enumerate() {
            let k = nearest_from(|k| s[k].t, s.len(), b.t, &mut leg_hint[i]);
            check(s[k].t, &format!("leg{i} IMU"))?;
            legs.push(ImuSample { t: b.t, ..s[k] });
        }
        let e = &ds.encoders;
        let k = nearest_from(|k| e[k].t, e.len(), b.t, &mut enc_hint);
        check(e[k].t, "encoder stream")?;
        if e[k].q.len() != n {
            return Err(Error::Dataset(format!("encoder snapshot with {} legs", e[k].q.len())));
        }
        let schedule = match &ds.contact {
            Some(c) => {
                let k = nearest_from(|k| c[k].t, c.len(), b.t, &mut con_hint);
                check(c[k].t, "contact log")?;
                Some(c[k].flags.clone())
            }
            None => None,
        };
        out.push(AlignedSample {
            body: *b,
            legs,
            joints: e[k].q.clone(),
            schedule,
        });
    }
    if out.is_empty() {
        return Err(Error::Dataset("streams do not overlap in time".into()));
    }
    Ok(out)
}

/// Contact and body-static flags for every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactPlan {
    pub source: ContactSource,
    /// Threshold the detector used.
    pub gamma: f64,
    /// Epoch-major.
    pub flags: Vec<Vec<bool>>,
    pub body_static: Vec<bool>,
}

fn flags_of(samples: &[ImuSample], glrt: &GlrtConfig) -> Result<Vec<bool>> {
    Ok(detect_stream(samples, glrt)?.iter().map(|d| d.contact).collect())
}

/// Detector threshold, calibrated when asked to against the contact log or,
/// without one, against the initial stationary window.
pub fn detector_config(aligned: &[AlignedSample], cfg: &RunConfig) -> Result<GlrtConfig> {
    let mut glrt = cfg.glrt;
    let has_schedule = aligned.first().is_some_and(|a| a.schedule.is_some());
    if cfg.run.calibrate_gamma && has_schedule && aligned.len() > glrt.window_len() {
        let n = aligned[0].legs.len();
        let accel: Vec<Vec<Vec3>> = (0..n)
            .map(|i| aligned.iter().map(|a| a.legs[i].accel).collect())
            .collect();
        let labels: Vec<Vec<bool>> = (0..n)
            .map(|i| aligned.iter().map(|a| a.schedule.as_ref().expect("checked")[i]).collect())
            .collect();
        let streams: Vec<(&[Vec3], &[bool])> = accel
            .iter()
            .zip(&labels)
            .map(|(a, l)| (a.as_slice(), l.as_slice()))
            .collect();
        let gamma = calibrate_gamma_from_schedule(&streams, &glrt)?;
        glrt.gamma = gamma.max(cfg.run.gamma_floor);
    } else if cfg.run.calibrate_gamma && !aligned.is_empty() {
        let t0 = aligned[0].body.t;
        let end = aligned.partition_point(|a| a.body.t < t0 + cfg.filter_config().init_duration);
        let rest = &aligned[..end];
        if rest.len() >= glrt.window_len() {
            let mut gamma = cfg.run.gamma_floor;
            for i in 0..rest[0].legs.len() {
                let accel: Vec<Vec3> = rest.iter().map(|a| a.legs[i].accel).collect();
                gamma = gamma.max(calibrate_gamma_from_rest(&accel, &glrt, cfg.run.gamma_floor)?);
            }
            glrt.gamma = gamma;
        }
    }
    Ok(glrt)
}

pub fn contact_plan(aligned: &[AlignedSample], cfg: &RunConfig) -> Result<ContactPlan> {
    let has_schedule = aligned.first().is_some_and(|a| a.schedule.is_some());
    let source = match cfg.run.contact {
        ContactSource::Auto if has_schedule => ContactSource::Schedule,
        ContactSource::Auto => ContactSource::Glrt,
        ContactSource::Schedule if !has_schedule => {
            return Err(Error::Config("contact = \"schedule\" needs a contact log".into()))
        }
        s => s,
    };
    let glrt = detector_config(aligned, cfg)?;
    let body: Vec<ImuSample> = aligned.iter().map(|a| a.body).collect();
    let body_static = flags_of(&body, &glrt)?;
    let n = aligned[0].legs.len();
    let flags = match source {
        ContactSource::Schedule => aligned
            .iter()
            .map(|a| a.schedule.clone().expect("checked"))
            .collect(),
        _ => {
            let per_leg = (0..n)
                .map(|i| {
                    let s: Vec<ImuSample> = aligned.iter().map(|a| a.legs[i]).collect();
                    flags_of(&s, &glrt)
                })
                .collect::<Result<Vec<_>>>()?;
            (0..aligned.len())
                .map(|k| per_leg.iter().map(|f| f[k]).collect())
                .collect()
        }
    };
    Ok(ContactPlan {
        source,
        gamma: glrt.gamma,
        flags,
        body_static,
    })
}

pub fn build_epochs(aligned: &[AlignedSample], plan: &ContactPlan) -> Vec<Epoch> {
    aligned
        .iter()
        .enumerate()
        .map(|(k, a)| Epoch {
            t: a.body.t,
            body: a.body,
            legs: a.legs.clone(),
            joints: a.joints.clone(),
            contact: plan.flags[k].clone(),
            body_static: plan.body_static[k],
        })
        .collect()
}

/// Mean wall-clock time per epoch, ms. Update time is averaged over the
/// epochs that had at least one update.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timing {
    pub epochs: usize,
    pub update_epochs: usize,
    pub predict_ms: f64,
    pub update_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Default)]
struct TimingAcc {
    n: usize,
    n_upd: usize,
    pred: f64,
    upd: f64,
}

impl TimingAcc {
    fn add(&mut self, (pred, upd): (f64, f64), had_update: bool) {
        self.n += 1;
        self.pred += pred;
        self.upd += upd;
        if had_update {
            self.n_upd += 1;
        }
    }

    fn finish(&self) -> Timing {
        let per = |x: f64, n: usize| if n == 0 { 0.0 } else { 1e3 * x / n as f64 };
        Timing {
            epochs: self.n,
            update_epochs: self.n_upd,
            predict_ms: per(self.pred, self.n),
            update_ms: per(self.upd, self.n_upd),
            total_ms: per(self.pred + self.upd, self.n),
        }
    }
}

/// Result of one estimator run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub estimator: EstimatorKind,
    pub records: Vec<StateRecord>,
    pub events: Vec<UpdateEvent>,
    pub timing: Timing,
    pub plan: ContactPlan,
    /// Per epoch, per leg: Leg-IMU roll and pitch (DogLegs only).
    pub leg_roll_pitch: Vec<Vec<(f64, f64)>>,
}

/// Everything prepared once per dataset and shared by estimators.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub filter: FilterConfig,
    pub epochs: Vec<Epoch>,
    pub plan: ContactPlan,
    /// Number of leading epochs in the initialization window.
    pub init_len: usize,
}

pub fn prepare(ds: &Dataset, cfg: &RunConfig) -> Result<Prepared> {
    let filter = cfg.filter_config();
    filter.validate()?;
    if ds.n_legs() != filter.n_legs {
        return Err(Error::Config(format!(
            "dataset has {} legs, configuration {}",
            ds.n_legs(),
            filter.n_legs
        )));
    }
    let aligned = align_epochs(ds)?;
    let plan = contact_plan(&aligned, cfg)?;
    let epochs = build_epochs(&aligned, &plan);
    let t0 = epochs[0].t;
    let init_len = epochs.partition_point(|e| e.t < t0 + filter.init_duration);
    Ok(Prepared {
        filter,
        epochs,
        plan,
        init_len: init_len.max(1),
    })
}

impl Prepared {
    fn init_windows(&self) -> (Vec<ImuSample>, Vec<Vec<ImuSample>>, Vec<Vec<JointAngles>>) {
        let w = &self.epochs[..self.init_len];
        let body = w.iter().map(|e| e.body).collect();
        let legs = (0..self.filter.n_legs)
            .map(|i| w.iter().map(|e| e.legs[i]).collect())
            .collect();
        let joints = w.iter().map(|e| e.joints.clone()).collect();
        (body, legs, joints)
    }

    pub fn doglegs(&self) -> Result<Ekf> {
        let (body, legs, joints) = self.init_windows();
        let mut roles = vec![ImuRole::Body];
        roles.extend((0..self.filter.n_legs).map(ImuRole::Leg));
        Ekf::initialize(self.filter.clone(), roles, &body, &legs, &joints, self.epochs[0].t)
    }

    pub fn foot_ins(&self, leg: usize) -> Result<FootIns> {
        let (body, legs, joints) = self.init_windows();
        FootIns::initialize(&self.filter, leg, &body, &legs, &joints, self.epochs[0].t)
    }

    pub fn leg_odom(&self) -> Result<LegOdom> {
        let (body, _, _) = self.init_windows();
        LegOdom::initialize(&self.filter, &body, self.epochs[0].t)
    }
}

fn v3(s: &nalgebra::DVector<f64>, o: usize) -> Vec3 {
    Vec3::new(s[o], s[o + 1], s[o + 2])
}

fn rpy(r: &crate::math_nav::Rotation) -> Vec3 {
    let e = EulerAngles::from_rotation(r);
    Vec3::new(e.roll, e.pitch, e.yaw)
}

fn doglegs_record(ekf: &Ekf) -> StateRecord {
    let (p, v, r) = ekf.body_pose().expect("DogLegs has a Body-IMU");
    let s = ekf.state.sigmas();
    let legs = (1..ekf.state.roles.len())
        .map(|i| LegRecord {
            p: ekf.state.nav[i].p,
            sigma_p: v3(&s, 15 * i),
        })
        .collect();
    StateRecord {
        t: ekf.state.t,
        p,
        v,
        rpy: rpy(&r),
        sigma_p: v3(&s, 0),
        sigma_v: v3(&s, 3),
        sigma_rpy: v3(&s, 6),
        legs,
    }
}

/// Run one estimator over prepared epochs. `external` supplies per-epoch
/// roll and pitch for Foot-INS.
pub fn run_prepared(prep: &Prepared, kind: EstimatorKind, external: Option<&[(f64, f64)]>) -> Result<RunOutput> {
    run_prepared_observed(prep, kind, external, &mut |_, _| {})
}

/// As [`run_prepared`], calling `observe(epoch, covariance)` after every step.
pub fn run_prepared_observed(
    prep: &Prepared,
    kind: EstimatorKind,
    external: Option<&[(f64, f64)]>,
    observe: &mut dyn FnMut(usize, &DMatrix<f64>),
) -> Result<RunOutput> {
    kind.validate(prep.filter.n_legs)?;
    if let Some(ext) = external {
        if ext.len() != prep.epochs.len() {
            return Err(Error::Config("external attitude must cover every epoch".into()));
        }
    }
    let mut acc = TimingAcc::default();
    let mut records = Vec::with_capacity(prep.epochs.len());
    let mut leg_roll_pitch = Vec::new();
    let events = match kind {
        EstimatorKind::DogLegs => {
            let mut f = prep.doglegs()?;
            for (k, e) in prep.epochs.iter().enumerate() {
                let before = f.events().len();
                let t = f.step(e)?;
                acc.add(t, f.events().len() > before);
                observe(k, &f.state.cov);
                records.push(doglegs_record(&f));
                leg_roll_pitch.push(
                    f.state.nav[1..]
                        .iter()
                        .map(|n| {
                            let a = EulerAngles::from_rotation(&n.r);
                            (a.roll, a.pitch)
                        })
                        .collect(),
                );
            }
            f.take_events()
        }
        EstimatorKind::FootIns(leg) => {
            let mut f = prep.foot_ins(leg)?;
            for (k, e) in prep.epochs.iter().enumerate() {
                let before = f.ekf.events().len();
                let t = f.step(e)?;
                if let Some(ext) = external {
                    f.set_roll_pitch(ext[k].0, ext[k].1);
                }
                acc.add(t, f.ekf.events().len() > before);
                observe(k, &f.ekf.state.cov);
                let nav = f.nav();
                let (sp, sv, sa) = f.sigmas();
                records.push(StateRecord {
                    t: e.t,
                    p: nav.p,
                    v: nav.v,
                    rpy: rpy(&nav.r),
                    sigma_p: sp,
                    sigma_v: sv,
                    sigma_rpy: sa,
                    legs: Vec::new(),
                });
            }
            f.ekf.take_events()
        }
        EstimatorKind::LegOdom => {
            let mut f = prep.leg_odom()?;
            for (k, e) in prep.epochs.iter().enumerate() {
                let before = f.events().len();
                let t = f.step(e)?;
                acc.add(t, f.events().len() > before);
                observe(k, &f.cov);
                let (p, v, r) = f.body_pose();
                let (sp, sv, sa) = f.sigmas();
                records.push(StateRecord {
                    t: e.t,
                    p,
                    v,
                    rpy: rpy(&r),
                    sigma_p: sp,
                    sigma_v: sv,
                    sigma_rpy: sa,
                    legs: Vec::new(),
                });
            }
            f.events().to_vec()
        }
    };
    Ok(RunOutput {
        estimator: kind,
        records,
        events,
        timing: acc.finish(),
        plan: prep.plan.clone(),
        leg_roll_pitch,
    })
}

pub fn run_estimator(ds: &Dataset, cfg: &RunConfig, kind: EstimatorKind) -> Result<RunOutput> {
    run_prepared(&prepare(ds, cfg)?, kind, None)
}
