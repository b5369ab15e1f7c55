//! Estimator output: per-epoch state records and the update-event log.

use std::io::{Read, Write};
use std::path::Path;

use crate::ekf::{UpdateEvent, UpdateKind};
use crate::error::{Error, Result};
use crate::math_nav::{EulerAngles, Vec3};
use crate::metrics::PoseTrack;

use super::logs::{self, create, push_f64, write_lines, Parsed};

const BODY_COLUMNS: [&str; 19] = [
    "t", "px", "py", "pz", "vx", "vy", "vz", "roll", "pitch", "yaw", "sd_px", "sd_py", "sd_pz",
    "sd_vx", "sd_vy", "sd_vz", "sd_roll", "sd_pitch", "sd_yaw",
];
const LEG_COLUMNS: [&str; 6] = ["px", "py", "pz", "sd_px", "sd_py", "sd_pz"];

/// Position of one Leg-IMU and its one-sigma.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegRecord {
    pub p: Vec3,
    pub sigma_p: Vec3,
}

/// Estimated state at one epoch. Angles in rad, Z-Y-X Euler.
#[derive(Debug, Clone, PartialEq)]
pub struct StateRecord {
    pub t: f64,
    pub p: Vec3,
    pub v: Vec3,
    pub rpy: Vec3,
    pub sigma_p: Vec3,
    pub sigma_v: Vec3,
    pub sigma_rpy: Vec3,
    /// Empty for estimators without Leg-IMU states.
    pub legs: Vec<LegRecord>,
}

pub fn state_header(n_legs: usize) -> Vec<String> {
    let mut h: Vec<String> = BODY_COLUMNS.iter().map(|s| s.to_string()).collect();
    for i in 0..n_legs {
        h.extend(LEG_COLUMNS.iter().map(|c| format!("leg{i}_{c}")));
    }
    h
}

pub fn write_state_log_to(out: &mut impl Write, records: &[StateRecord]) -> std::io::Result<()> {
    let n_legs = records.first().map_or(0, |r| r.legs.len());
    let rows = records.iter().map(|r| {
        let mut line = String::new();
        push_f64(&mut line, r.t);
        for v in [r.p, r.v, r.rpy, r.sigma_p, r.sigma_v, r.sigma_rpy] {
            v.iter().for_each(|x| push_f64(&mut line, *x));
        }
        for l in &r.legs {
            l.p.iter().chain(l.sigma_p.iter()).for_each(|x| push_f64(&mut line, *x));
        }
        line
    });
    write_lines(out, &state_header(n_legs), rows)
}

pub fn write_state_log(path: impl AsRef<Path>, records: &[StateRecord]) -> Result<()> {
    let path = path.as_ref();
    if records.iter().any(|r| r.legs.len() != records[0].legs.len()) {
        return Err(Error::Config("state records disagree on the number of legs".into()));
    }
    write_state_log_to(&mut create(path)?, records).map_err(|e| Error::io(path, e))
}

fn leg_count(name: &str, header_line: &str) -> Result<usize> {
    let cols = header_line.trim_end().split(',').count();
    let extra = cols.checked_sub(BODY_COLUMNS.len());
    match extra {
        Some(e) if e % LEG_COLUMNS.len() == 0 => Ok(e / LEG_COLUMNS.len()),
        _ => Err(Error::Parse {
            path: name.to_string(),
            line: 1,
            message: format!("{cols} columns do not form a state log header"),
        }),
    }
}

pub fn parse_state_log(mut input: impl Read, name: &str) -> Result<Parsed<StateRecord>> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes).map_err(|e| Error::io(name, e))?;
    let first = bytes.split(|b| *b == b'\n').next().unwrap_or_default();
    let n_legs = leg_count(name, &String::from_utf8_lossy(first))?;
    let header = state_header(n_legs);
    logs::read_table(
        &bytes[..],
        name,
        &header,
        |v| {
            let v3 = |i: usize| Vec3::new(v[i], v[i + 1], v[i + 2]);
            let sigmas_ok = v[10..19].iter().all(|s| *s >= 0.0);
            let finite = v.iter().all(|x| x.is_finite());
            (finite && sigmas_ok).then(|| StateRecord {
                t: v[0],
                p: v3(1),
                v: v3(4),
                rpy: v3(7),
                sigma_p: v3(10),
                sigma_v: v3(13),
                sigma_rpy: v3(16),
                legs: (0..n_legs)
                    .map(|i| {
                        let o = 19 + 6 * i;
                        LegRecord { p: v3(o), sigma_p: v3(o + 3) }
                    })
                    .collect(),
            })
        },
        |r| r.t,
    )
}

pub fn read_state_log(path: impl AsRef<Path>) -> Result<Parsed<StateRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_state_log(file, &path.display().to_string())
}

/// Body poses of a state log.
pub fn states_to_track(records: &[StateRecord]) -> PoseTrack {
    let mut track = PoseTrack::default();
    for r in records {
        let rot = EulerAngles::new(r.rpy.x, r.rpy.y, r.rpy.z).to_rotation();
        track.push(r.t, r.p, nalgebra::UnitQuaternion::from_rotation_matrix(&rot));
    }
    track
}

/// Read either a truth log or a state log as a pose track.
pub fn read_trajectory(path: impl AsRef<Path>) -> Result<PoseTrack> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    if bytes.starts_with(logs::TRUTH_HEADER.join(",").as_bytes()) {
        logs::parse_truth(&bytes[..], &name)
    } else {
        Ok(states_to_track(&parse_state_log(&bytes[..], &name)?.rows))
    }
}

pub const EVENT_HEADER: [&str; 10] = [
    "epoch",
    "t",
    "imu",
    "kind",
    "innovation_x",
    "innovation_y",
    "innovation_z",
    "innovation_norm",
    "mahalanobis2",
    "status",
];

pub fn write_event_log_to(out: &mut impl Write, events: &[UpdateEvent]) -> std::io::Result<()> {
    let rows = events.iter().map(|e| {
        let kind = match e.kind {
            UpdateKind::Zupt => "zupt",
            UpdateKind::RelPos => "relpos",
        };
        let status = if e.accepted { "accepted" } else { "gated" };
        let mut line = format!("{}", e.epoch);
        push_f64(&mut line, e.t);
        line.push_str(&format!(",{},{kind}", e.imu));
        for v in e.innovation {
            push_f64(&mut line, v);
        }
        push_f64(&mut line, Vec3::from(e.innovation).norm());
        push_f64(&mut line, e.mahalanobis2);
        line.push(',');
        line.push_str(status);
        line
    });
    let header: Vec<String> = EVENT_HEADER.iter().map(|s| s.to_string()).collect();
    write_lines(out, &header, rows)
}

pub fn write_event_log(path: impl AsRef<Path>, events: &[UpdateEvent]) -> Result<()> {
    let path = path.as_ref();
    write_event_log_to(&mut create(path)?, events).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(t: f64, n_legs: usize) -> StateRecord {
        let v = |a: f64| Vec3::new(a, -a / 3.0, a * 1e-9);
        StateRecord {
            t,
            p: v(1.0 + t),
            v: v(0.5),
            rpy: v(0.01),
            sigma_p: v(1e-3).abs(),
            sigma_v: v(1e-2).abs(),
            sigma_rpy: v(1e-4).abs(),
            legs: (0..n_legs)
                .map(|i| LegRecord { p: v(i as f64 + 0.1), sigma_p: v(2e-3).abs() })
                .collect(),
        }
    }

    #[test]
    fn state_log_round_trips_with_and_without_legs() {
        for n in [0, 4] {
            let recs: Vec<_> = (0..5).map(|k| record(k as f64 * 0.005, n)).collect();
            let mut buf = Vec::new();
            write_state_log_to(&mut buf, &recs).unwrap();
            let back = parse_state_log(&buf[..], "s").unwrap();
            assert_eq!(back.rows, recs);
        }
    }

    #[test]
    fn negative_sigma_is_malformed() {
        let mut recs: Vec<_> = (0..3).map(|k| record(k as f64, 1)).collect();
        recs[1].sigma_v.x = -1.0;
        let mut buf = Vec::new();
        write_state_log_to(&mut buf, &recs).unwrap();
        assert_eq!(parse_state_log(&buf[..], "s").unwrap().skipped, 1);
        assert!(parse_state_log(&b"t,px\n0,1\n"[..], "s").is_err());
    }
}
