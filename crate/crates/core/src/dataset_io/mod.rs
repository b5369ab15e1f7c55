//! On-disk datasets: CSV streams, a JSON manifest and the run configuration.
//!
//! A dataset directory holds `manifest.json` and the files it lists. Units
//! are SI throughout.

pub mod config;
pub mod logs;
pub mod output;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{load_config, parse_config, save_config, ContactSource, RunConfig, RunOptions};
pub use logs::{
    parse_contact_log, parse_encoder_log, parse_imu_log, parse_truth, read_contact_log,
    read_encoder_log, read_imu_log, read_truth, write_contact_log, write_encoder_log,
    write_imu_log, write_truth, ContactSample, EncoderSample, Parsed,
};
pub use output::{
    parse_state_log, read_state_log, read_trajectory, write_event_log, write_state_log,
    LegRecord, StateRecord,
};

use crate::ekf::ImuRole;
use crate::error::{Error, Result};
use crate::metrics::PoseTrack;
use crate::simulator::{SimOutput, Trajectory};
use crate::strapdown::ImuSample;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamKind {
    Imu,
    Encoders,
    Contact,
    Truth,
}

/// One file of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamEntry {
    pub id: String,
    pub kind: StreamKind,
    /// `body` or `leg<i>` for IMU and truth streams.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub imu: Option<String>,
    /// Relative to the dataset root.
    pub file: String,
    /// Hz
    pub fs: f64,
    /// Added to every timestamp of the stream, s.
    #[serde(default)]
    pub time_offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub name: String,
    pub n_legs: usize,
    pub streams: Vec<StreamEntry>,
    /// Run configuration holding leg geometry and extrinsics.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<String>,
}

impl DatasetManifest {
    /// Structural checks that need no file system.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("manifest: {m}")));
        if self.n_legs == 0 {
            return bad("n_legs must be at least 1".into());
        }
        let mut ids = BTreeSet::new();
        let mut slots = BTreeSet::new();
        for s in &self.streams {
            if !ids.insert(s.id.as_str()) {
                return bad(format!("duplicate stream id {:?}", s.id));
            }
            if !(s.fs.is_finite() && s.fs > 0.0) {
                return bad(format!("stream {:?}: fs must be positive", s.id));
            }
            if !s.time_offset.is_finite() {
                return bad(format!("stream {:?}: time_offset must be finite", s.id));
            }
            if s.file.is_empty() {
                return bad(format!("stream {:?}: empty file name", s.id));
            }
            let role = match (s.kind, &s.imu) {
                (StreamKind::Imu | StreamKind::Truth, Some(key)) => match ImuRole::parse(key) {
                    Some(ImuRole::Leg(i)) if i >= self.n_legs => {
                        return bad(format!("stream {:?}: leg {i} out of range", s.id))
                    }
                    Some(r) => Some(r),
                    None => return bad(format!("stream {:?}: unknown imu {key:?}", s.id)),
                },
                (StreamKind::Imu | StreamKind::Truth, None) => {
                    return bad(format!("stream {:?}: imu is required", s.id))
                }
                (_, Some(_)) => return bad(format!("stream {:?}: imu only applies to imu and truth", s.id)),
                (_, None) => None,
            };
            if !slots.insert((s.kind as u8, role)) {
                return bad(format!("stream {:?} duplicates another stream", s.id));
            }
        }
        for role in std::iter::once(ImuRole::Body).chain((0..self.n_legs).map(ImuRole::Leg)) {
            if self.find(StreamKind::Imu, Some(role)).is_none() {
                return bad(format!("missing imu stream for {role}"));
            }
        }
        if self.find(StreamKind::Encoders, None).is_none() {
            return bad("missing encoder stream".into());
        }
        Ok(())
    }

    /// Check that every referenced file exists under `root`.
    pub fn validate_files(&self, root: &Path) -> Result<()> {
        let files = self.streams.iter().map(|s| &s.file).chain(&self.config);
        for f in files {
            if !root.join(f).is_file() {
                return Err(Error::Config(format!(
                    "manifest references missing file {}",
                    root.join(f).display()
                )));
            }
        }
        Ok(())
    }

    pub fn find(&self, kind: StreamKind, role: Option<ImuRole>) -> Option<&StreamEntry> {
        self.streams.iter().find(|s| {
            s.kind == kind && s.imu.as_deref().and_then(ImuRole::parse) == role
        })
    }
}

pub fn parse_manifest(bytes: &[u8]) -> Result<DatasetManifest> {
    let m: DatasetManifest = serde_json::from_slice(bytes)?;
    m.validate()?;
    Ok(m)
}

/// Everything an estimator run consumes, plus optional references.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub fs: f64,
    pub body_imu: Vec<ImuSample>,
    pub leg_imus: Vec<Vec<ImuSample>>,
    pub encoders: Vec<EncoderSample>,
    pub contact: Option<Vec<ContactSample>>,
    /// Body-frame reference trajectory.
    pub truth: Option<PoseTrack>,
    /// Per-leg Leg-IMU reference trajectories; empty when absent.
    pub leg_truth: Vec<PoseTrack>,
    pub config: Option<RunConfig>,
}

impl Dataset {
    pub fn n_legs(&self) -> usize {
        self.leg_imus.len()
    }

    /// Package a simulated run.
    pub fn from_sim(name: &str, sim: &SimOutput, cfg: Option<RunConfig>, fs: f64) -> Self {
        let truth = &sim.truth;
        let track = |traj: &Trajectory| {
            let mut t = PoseTrack::default();
            for k in 0..traj.len() {
                t.push(traj.t[k], traj.p[k], nalgebra::UnitQuaternion::from_rotation_matrix(&traj.r[k]));
            }
            t
        };
        Self {
            name: name.to_string(),
            fs,
            body_imu: sim.body_imu.clone(),
            leg_imus: sim.leg_imus.clone(),
            encoders: truth
                .t
                .iter()
                .zip(&sim.encoders)
                .map(|(&t, q)| EncoderSample { t, q: q.clone() })
                .collect(),
            contact: Some(
                (0..truth.t.len())
                    .map(|k| ContactSample {
                        t: truth.t[k],
                        flags: truth.contacts_at(k),
                    })
                    .collect(),
            ),
            truth: Some(track(&truth.body)),
            leg_truth: truth.leg_imus.iter().map(track).collect(),
            config: cfg,
        }
    }
}

fn entry(id: &str, kind: StreamKind, imu: Option<ImuRole>, file: &str, fs: f64) -> StreamEntry {
    StreamEntry {
        id: id.to_string(),
        kind,
        imu: imu.map(ImuRole::key),
        file: file.to_string(),
        fs,
        time_offset: 0.0,
    }
}

/// Write `ds` under `dir` and return the manifest.
pub fn write_dataset(dir: impl AsRef<Path>, ds: &Dataset) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n = ds.n_legs();
    let mut streams = vec![entry("imu_body", StreamKind::Imu, Some(ImuRole::Body), "imu_body.csv", ds.fs)];
    write_imu_log(dir.join("imu_body.csv"), &ds.body_imu)?;
    for (i, s) in ds.leg_imus.iter().enumerate() {
        let id = format!("imu_leg{i}");
        let file = format!("{id}.csv");
        write_imu_log(dir.join(&file), s)?;
        streams.push(entry(&id, StreamKind::Imu, Some(ImuRole::Leg(i)), &file, ds.fs));
    }
    write_encoder_log(dir.join("encoders.csv"), n, &ds.encoders)?;
    streams.push(entry("encoders", StreamKind::Encoders, None, "encoders.csv", ds.fs));
    if let Some(c) = &ds.contact {
        write_contact_log(dir.join("contact.csv"), n, c)?;
        streams.push(entry("contact", StreamKind::Contact, None, "contact.csv", ds.fs));
    }
    if let Some(t) = &ds.truth {
        write_truth(dir.join("truth_body.csv"), t)?;
        streams.push(entry("truth_body", StreamKind::Truth, Some(ImuRole::Body), "truth_body.csv", ds.fs));
    }
    for (i, t) in ds.leg_truth.iter().enumerate() {
        let id = format!("truth_leg{i}");
        let file = format!("{id}.csv");
        write_truth(dir.join(&file), t)?;
        streams.push(entry(&id, StreamKind::Truth, Some(ImuRole::Leg(i)), &file, ds.fs));
    }
    let config = match &ds.config {
        Some(c) => {
            save_config(dir.join("config.toml"), c)?;
            Some("config.toml".to_string())
        }
        None => None,
    };
    let manifest = DatasetManifest {
        name: ds.name.clone(),
        n_legs: n,
        streams,
        config,
    };
    manifest.validate()?;
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn shift<T>(rows: &mut [T], dt: f64, t: impl Fn(&mut T) -> &mut f64) {
    if dt != 0.0 {
        rows.iter_mut().for_each(|r| *t(r) += dt);
    }
}

/// Load the dataset described by `dir/manifest.json`.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mpath = dir.join(MANIFEST_FILE);
    let bytes = std::fs::read(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest = parse_manifest(&bytes)?;
    manifest.validate_files(dir)?;
    let n = manifest.n_legs;
    let path = |s: &StreamEntry| -> PathBuf { dir.join(&s.file) };
    let imu = |role| -> Result<Vec<ImuSample>> {
        let s = manifest.find(StreamKind::Imu, Some(role)).expect("validated");
        let mut rows = read_imu_log(path(s))?.rows;
        shift(&mut rows, s.time_offset, |r| &mut r.t);
        Ok(rows)
    };
    let body_imu = imu(ImuRole::Body)?;
    let leg_imus = (0..n).map(|i| imu(ImuRole::Leg(i))).collect::<Result<Vec<_>>>()?;
    let enc = manifest.find(StreamKind::Encoders, None).expect("validated");
    let mut encoders = read_encoder_log(path(enc), n)?.rows;
    shift(&mut encoders, enc.time_offset, |r| &mut r.t);
    let contact = match manifest.find(StreamKind::Contact, None) {
        Some(s) => {
            let mut rows = read_contact_log(path(s), n)?.rows;
            shift(&mut rows, s.time_offset, |r| &mut r.t);
            Some(rows)
        }
        None => None,
    };
    let track = |s: &StreamEntry| -> Result<PoseTrack> {
        let mut t = read_truth(path(s))?;
        shift(&mut t.t, s.time_offset, |x| x);
        Ok(t)
    };
    let truth = manifest
        .find(StreamKind::Truth, Some(ImuRole::Body))
        .map(track)
        .transpose()?;
    let mut leg_truth = Vec::new();
    for i in 0..n {
        match manifest.find(StreamKind::Truth, Some(ImuRole::Leg(i))) {
            Some(s) => leg_truth.push(track(s)?),
            None => break,
        }
    }
    let config = manifest
        .config
        .as_ref()
        .map(|f| load_config(dir.join(f)))
        .transpose()?;
    let fs = manifest.find(StreamKind::Imu, Some(ImuRole::Body)).expect("validated").fs;
    Ok(Dataset {
        name: manifest.name,
        fs,
        body_imu,
        leg_imus,
        encoders,
        contact,
        truth,
        leg_truth,
        config,
    })
}
