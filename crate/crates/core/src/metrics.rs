//! Trajectory evaluation: association, rigid alignment, absolute and relative
//! pose errors, loop closure and roll/pitch statistics.

use std::io::Write;

use nalgebra::{Matrix3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math_nav::{rotation_angle, EulerAngles, Rotation, Vec3};

/// Poses are associated when their timestamps differ by at most this, s.
pub const MAX_ASSOCIATION_DT: f64 = 0.01;
/// Default relative-pose segment length, m.
pub const DEFAULT_RPE_DELTA: f64 = 10.0;

/// Timestamped poses of one frame in a fixed world frame.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PoseTrack {
    pub t: Vec<f64>,
    pub p: Vec<Vec3>,
    pub q: Vec<UnitQuaternion<f64>>,
}

impl PoseTrack {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn push(&mut self, t: f64, p: Vec3, q: UnitQuaternion<f64>) {
        self.t.push(t);
        self.p.push(p);
        self.q.push(q);
    }

    pub fn rotation(&self, k: usize) -> Rotation {
        self.q[k].to_rotation_matrix()
    }

    /// Every pose mapped through `x -> r * x + t`.
    pub fn transformed(&self, a: &Alignment) -> Self {
        let rq = UnitQuaternion::from_rotation_matrix(&a.r);
        Self {
            t: self.t.clone(),
            p: self.p.iter().map(|p| a.r * p + a.t).collect(),
            q: self.q.iter().map(|q| rq * q).collect(),
        }
    }

    /// Poses at the given indices.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            t: idx.iter().map(|&k| self.t[k]).collect(),
            p: idx.iter().map(|&k| self.p[k]).collect(),
            q: idx.iter().map(|&k| self.q[k]).collect(),
        }
    }

    /// Cumulative travelled distance at every pose.
    pub fn path_length(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.len());
        let mut acc = 0.0;
        for k in 0..self.len() {
            if k > 0 {
                acc += (self.p[k] - self.p[k - 1]).norm();
            }
            s.push(acc);
        }
        s
    }
}

/// Rigid transform `x -> r * x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alignment {
    pub r: Rotation,
    pub t: Vec3,
}

impl Alignment {
    pub fn identity() -> Self {
        Self {
            r: Rotation::identity(),
            t: Vec3::zeros(),
        }
    }

    pub fn inverse(&self) -> Self {
        let r = self.r.inverse();
        Self { r, t: -(r * self.t) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMode {
    None,
    Se3,
    YawOnly,
}

/// Index pairs `(est, ref)` of poses whose timestamps lie within `max_dt`.
/// Each estimate pose takes its nearest reference pose.
pub fn associate(est: &PoseTrack, reference: &PoseTrack, max_dt: f64) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    if reference.is_empty() {
        return pairs;
    }
    for (i, &t) in est.t.iter().enumerate() {
        let j = reference.t.partition_point(|&r| r < t);
        let best = [j.checked_sub(1), (j < reference.len()).then_some(j)]
            .into_iter()
            .flatten()
            .min_by(|&a, &b| (reference.t[a] - t).abs().total_cmp(&(reference.t[b] - t).abs()));
        if let Some(k) = best {
            if (reference.t[k] - t).abs() <= max_dt {
                pairs.push((i, k));
            }
        }
    }
    pairs
}

/// Associated subsequences of both tracks.
pub fn associated(est: &PoseTrack, reference: &PoseTrack, max_dt: f64) -> Result<(PoseTrack, PoseTrack)> {
    let pairs = associate(est, reference, max_dt);
    if pairs.is_empty() {
        return Err(Error::Metrics("no poses could be associated".into()));
    }
    let (ie, ir): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
    Ok((est.select(&ie), reference.select(&ir)))
}

fn centroid(p: &[Vec3]) -> Vec3 {
    p.iter().sum::<Vec3>() / p.len() as f64
}

/// Least-squares rigid transform taking `est` points onto `reference`.
pub fn umeyama_align(est: &[Vec3], reference: &[Vec3], mode: AlignMode) -> Result<Alignment> {
    if est.len() != reference.len() {
        return Err(Error::Metrics("alignment needs paired points".into()));
    }
    if mode == AlignMode::None {
        return Ok(Alignment::identity());
    }
    if est.len() < 3 {
        return Err(Error::Metrics(format!("alignment needs >= 3 points, got {}", est.len())));
    }
    let me = centroid(est);
    let mr = centroid(reference);
    let mut scatter = Matrix3::zeros();
    let mut cross = Matrix3::zeros();
    for (e, r) in est.iter().zip(reference) {
        let (de, dr) = (e - me, r - mr);
        scatter += de * de.transpose();
        cross += dr * de.transpose();
    }
    let s = scatter.symmetric_eigenvalues();
    let (lo, hi) = (s.min(), s.max());
    let degenerate = match mode {
        AlignMode::YawOnly => {
            let xy = scatter.fixed_view::<2, 2>(0, 0).into_owned();
            xy.trace() <= 1e-20 * hi.max(1.0)
        }
        _ => {
            let mid = s.sum() - lo - hi;
            !(mid > 1e-10 * hi)
        }
    };
    if degenerate {
        return Err(Error::Metrics("points are degenerate (collinear or coincident)".into()));
    }
    let r = match mode {
        AlignMode::Se3 => {
            let svd = cross.svd(true, true);
            let u = svd.u.expect("requested");
            let vt = svd.v_t.expect("requested");
            let d = (u * vt).determinant().signum();
            let fix = Matrix3::from_diagonal(&Vec3::new(1.0, 1.0, d));
            Rotation::from_matrix_unchecked(u * fix * vt)
        }
        AlignMode::YawOnly => {
            let a = cross[(0, 0)] + cross[(1, 1)];
            let b = cross[(1, 0)] - cross[(0, 1)];
            Rotation::from_axis_angle(&Vec3::z_axis(), b.atan2(a))
        }
        AlignMode::None => unreachable!(),
    };
    Ok(Alignment { r, t: mr - r * me })
}

/// Yaw rotation best matching the orientations of `est` to `reference`.
pub fn yaw_align_orientations(est: &PoseTrack, reference: &PoseTrack) -> Rotation {
    let (mut a, mut b) = (0.0, 0.0);
    for k in 0..est.len().min(reference.len()) {
        let m = est.rotation(k) * reference.rotation(k).inverse();
        let m = m.matrix();
        a += m[(0, 0)] + m[(1, 1)];
        b += m[(0, 1)] - m[(1, 0)];
    }
    Rotation::from_axis_angle(&Vec3::z_axis(), b.atan2(a))
}

/// Absolute error of one associated pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseError {
    pub t: f64,
    pub dp: Vec3,
    /// deg
    pub rot: f64,
    pub roll: f64,
    pub pitch: f64,
}

fn rmse(v: impl Iterator<Item = f64>) -> f64 {
    let (n, s) = v.fold((0usize, 0.0), |(n, s), x| (n + 1, s + x * x));
    if n == 0 {
        0.0
    } else {
        (s / n as f64).sqrt()
    }
}

/// Translation (m) and rotation (deg) RMSE over already associated and
/// aligned tracks.
pub fn ape(est: &PoseTrack, reference: &PoseTrack) -> Result<(f64, f64)> {
    if est.is_empty() || est.len() != reference.len() {
        return Err(Error::Metrics("APE needs a non-empty associated pair of tracks".into()));
    }
    let tra = rmse((0..est.len()).map(|k| (est.p[k] - reference.p[k]).norm()));
    let rot = rmse((0..est.len()).map(|k| {
        rotation_angle(&(reference.rotation(k).inverse() * est.rotation(k))).to_degrees()
    }));
    Ok((tra, rot))
}

/// Relative pose error over segments of reference path length `delta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rpe {
    /// Translation RMSE as a percentage of segment length.
    pub tra_pct: f64,
    /// Rotation RMSE per metre of segment, deg/m.
    pub rot_deg_per_m: f64,
    /// Rotation RMSE per segment, deg.
    pub rot_deg: f64,
    pub segments: usize,
}

/// Segments start at every pose and end at the first pose at least `delta`
/// further along the reference path.
pub fn rpe(est: &PoseTrack, reference: &PoseTrack, delta: f64) -> Result<Rpe> {
    if est.len() != reference.len() || !(delta > 0.0) {
        return Err(Error::Metrics("RPE needs associated tracks and delta > 0".into()));
    }
    let s = reference.path_length();
    if s.last().is_none_or(|&l| l < delta) {
        return Err(Error::Metrics(format!(
            "reference path of {:.3} m is shorter than the {delta} m segment",
            s.last().copied().unwrap_or(0.0)
        )));
    }
    let (mut tra, mut rot_m, mut rot) = (Vec::new(), Vec::new(), Vec::new());
    let mut j = 0;
    for i in 0..reference.len() {
        j = j.max(i);
        while j < s.len() && s[j] - s[i] < delta {
            j += 1;
        }
        if j == s.len() {
            break;
        }
        let len = s[j] - s[i];
        let rel = |tr: &PoseTrack| {
            let ri = tr.rotation(i).inverse();
            (ri * tr.rotation(j), ri * (tr.p[j] - tr.p[i]))
        };
        let (rr, tr_ref) = rel(reference);
        let (re, tr_est) = rel(est);
        let e_t = rr.inverse() * (tr_est - tr_ref);
        let e_r = rotation_angle(&(rr.inverse() * re)).to_degrees();
        tra.push(100.0 * e_t.norm() / len);
        rot_m.push(e_r / len);
        rot.push(e_r);
    }
    Ok(Rpe {
        tra_pct: rmse(tra.iter().copied()),
        rot_deg_per_m: rmse(rot_m.iter().copied()),
        rot_deg: rmse(rot.iter().copied()),
        segments: tra.len(),
    })
}

/// Distance between the first and last position.
pub fn loop_closure_error(track: &PoseTrack) -> f64 {
    match (track.p.first(), track.p.last()) {
        (Some(a), Some(b)) => (b - a).norm(),
        _ => 0.0,
    }
}

/// Distance between the poses nearest to `t_start` and `t_end`.
pub fn loop_closure_between(track: &PoseTrack, t_start: f64, t_end: f64) -> Result<f64> {
    let nearest = |t: f64| {
        (0..track.len())
            .min_by(|&a, &b| (track.t[a] - t).abs().total_cmp(&(track.t[b] - t).abs()))
            .ok_or_else(|| Error::Metrics("empty trajectory".into()))
    };
    Ok((track.p[nearest(t_end)?] - track.p[nearest(t_start)?]).norm())
}

/// Roll and pitch error statistics, deg.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AttitudeErrors {
    pub roll_rmse: f64,
    pub roll_max: f64,
    pub pitch_rmse: f64,
    pub pitch_max: f64,
}

/// Per-pose roll and pitch of the body-frame error rotation after removing
/// the best common yaw offset, deg.
pub fn roll_pitch_errors(est: &PoseTrack, reference: &PoseTrack) -> Result<Vec<(f64, f64)>> {
    if est.is_empty() || est.len() != reference.len() {
        return Err(Error::Metrics("attitude errors need associated tracks".into()));
    }
    let yaw = yaw_align_orientations(est, reference);
    Ok((0..est.len())
        .map(|k| {
            let d = reference.rotation(k).inverse() * yaw * est.rotation(k);
            let e = EulerAngles::from_rotation(&d);
            (e.roll.to_degrees(), e.pitch.to_degrees())
        })
        .collect())
}

pub fn attitude_errors(est: &PoseTrack, reference: &PoseTrack) -> Result<AttitudeErrors> {
    let e = roll_pitch_errors(est, reference)?;
    let max = |f: fn(&(f64, f64)) -> f64| e.iter().map(f).fold(0.0f64, |m, x| m.max(x.abs()));
    Ok(AttitudeErrors {
        roll_rmse: rmse(e.iter().map(|x| x.0)),
        roll_max: max(|x| x.0),
        pitch_rmse: rmse(e.iter().map(|x| x.1)),
        pitch_max: max(|x| x.1),
    })
}

/// All metrics of one estimate against one reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// %
    pub rpe_tra: Option<f64>,
    /// deg/m
    pub rpe_rot: Option<f64>,
    /// deg per segment
    pub rpe_rot_segment: Option<f64>,
    /// m
    pub ape_tra: f64,
    /// deg
    pub ape_rot: f64,
    /// m
    pub loop_closure: f64,
    #[serde(flatten)]
    pub attitude: AttitudeErrors,
    pub pairs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub align: AlignMode,
    pub rpe_delta: f64,
    pub max_dt: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            align: AlignMode::Se3,
            rpe_delta: DEFAULT_RPE_DELTA,
            max_dt: MAX_ASSOCIATION_DT,
        }
    }
}

/// Associate, align and compute every metric. RPE is absent when the
/// reference is shorter than one segment.
pub fn evaluate(est: &PoseTrack, reference: &PoseTrack, opts: &EvalOptions) -> Result<(MetricReport, Vec<PoseError>)> {
    let (raw, r) = associated(est, reference, opts.max_dt)?;
    let a = umeyama_align(&raw.p, &r.p, opts.align)?;
    let e = raw.transformed(&a);
    let (ape_tra, ape_rot) = ape(&e, &r)?;
    let rp = rpe(&e, &r, opts.rpe_delta).ok();
    // Roll and pitch are gravity-referenced; they only tolerate a yaw offset.
    let rp_err = roll_pitch_errors(&raw, &r)?;
    let attitude = attitude_errors(&raw, &r)?;
    let per_pose = (0..e.len())
        .map(|k| PoseError {
            t: e.t[k],
            dp: e.p[k] - r.p[k],
            rot: rotation_angle(&(r.rotation(k).inverse() * e.rotation(k))).to_degrees(),
            roll: rp_err[k].0,
            pitch: rp_err[k].1,
        })
        .collect();
    let report = MetricReport {
        rpe_tra: rp.map(|x| x.tra_pct),
        rpe_rot: rp.map(|x| x.rot_deg_per_m),
        rpe_rot_segment: rp.map(|x| x.rot_deg),
        ape_tra,
        ape_rot,
        loop_closure: loop_closure_error(est),
        attitude,
        pairs: e.len(),
    };
    Ok((report, per_pose))
}

pub fn write_pose_errors(out: &mut impl Write, errors: &[PoseError]) -> std::io::Result<()> {
    writeln!(out, "t,ex,ey,ez,e_norm,e_rot_deg,e_roll_deg,e_pitch_deg")?;
    for e in errors {
        writeln!(
            out,
            "{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            e.t,
            e.dp.x,
            e.dp.y,
            e.dp.z,
            e.dp.norm(),
            e.rot,
            e.roll,
            e.pitch
        )?;
    }
    out.flush()
}
