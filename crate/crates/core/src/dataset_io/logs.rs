//! CSV stream logs.
//!
//! Every log has a fixed header and a time column first. Values are written
//! in the shortest form that parses back to the same bits.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion};

use crate::error::{Error, Result};
use crate::kinematics::JointAngles;
use crate::math_nav::Vec3;
use crate::metrics::PoseTrack;
use crate::strapdown::ImuSample;

pub const IMU_HEADER: [&str; 7] = ["t", "gx", "gy", "gz", "ax", "ay", "az"];
pub const TRUTH_HEADER: [&str; 8] = ["t", "px", "py", "pz", "qw", "qx", "qy", "qz"];

/// Time steps backwards by more than this are errors; smaller ones are
/// treated as duplicate rows.
pub const TIME_TOLERANCE: f64 = 1e-9;

/// Accepted rows plus the number of malformed rows that were skipped.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub rows: Vec<T>,
    pub skipped: usize,
}

/// One snapshot of every leg's encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderSample {
    pub t: f64,
    pub q: Vec<JointAngles>,
}

/// Contact flags of every leg at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct ContactSample {
    pub t: f64,
    pub flags: Vec<bool>,
}

/// Largest number of malformed rows tolerated among `total`.
pub fn allowed_malformed(total: usize) -> usize {
    (total / 1000).max(1)
}

pub fn encoder_header(n_legs: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for i in 0..n_legs {
        h.extend(["abd", "hip", "knee"].map(|j| format!("q{i}_{j}")));
    }
    h
}

pub fn contact_header(n_legs: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((0..n_legs).map(|i| format!("c{i}")));
    h
}

fn owned(h: &[&str]) -> Vec<String> {
    h.iter().map(|s| s.to_string()).collect()
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

fn parse_error(name: &str, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: name.to_string(),
        line,
        message: message.into(),
    }
}

fn check_header(name: &str, got: &[String], expected: &[String]) -> Result<()> {
    if got == expected {
        return Ok(());
    }
    let missing: Vec<&str> = expected
        .iter()
        .filter(|c| !got.contains(c))
        .map(String::as_str)
        .collect();
    let message = if missing.is_empty() {
        format!("header must be `{}`", expected.join(","))
    } else {
        format!(
            "{} columns, expected {}; missing {}",
            got.len(),
            expected.len(),
            missing.join(",")
        )
    };
    Err(parse_error(name, 1, message))
}

/// Read a numeric table with header `expected`. `accept` turns a parsed row
/// into a record or rejects it as malformed.
pub(crate) fn read_table<T>(
    input: impl Read,
    name: &str,
    expected: &[String],
    mut accept: impl FnMut(&[f64]) -> Option<T>,
    time_of: impl Fn(&T) -> f64,
) -> Result<Parsed<T>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let mut record = csv::ByteRecord::new();
    let header_read = reader
        .read_byte_record(&mut record)
        .map_err(|e| parse_error(name, 1, e.to_string()))?;
    if !header_read {
        return Err(parse_error(name, 1, "empty file"));
    }
    let header: Vec<String> = record
        .iter()
        .map(|f| String::from_utf8_lossy(f).into_owned())
        .collect();
    check_header(name, &header, expected)?;

    let mut rows: Vec<T> = Vec::new();
    let mut skipped = 0usize;
    let mut total = 0usize;
    let mut values = Vec::with_capacity(expected.len());
    loop {
        let line = reader.position().line();
        match reader.read_byte_record(&mut record) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => {
                if e.is_io_error() {
                    return Err(parse_error(name, line, e.to_string()));
                }
                total += 1;
                skipped += 1;
                continue;
            }
        }
        let line = record.position().map_or(line, |p| p.line());
        total += 1;
        values.clear();
        let parsed = record.len() == expected.len()
            && record.iter().all(|f| {
                match std::str::from_utf8(f).ok().and_then(|s| s.parse::<f64>().ok()) {
                    Some(v) => {
                        values.push(v);
                        true
                    }
                    None => false,
                }
            });
        let Some(row) = parsed.then(|| accept(&values)).flatten() else {
            skipped += 1;
            continue;
        };
        let t = time_of(&row);
        if let Some(prev) = rows.last().map(&time_of) {
            if t < prev - TIME_TOLERANCE {
                return Err(parse_error(
                    name,
                    line,
                    format!("time goes backwards: {t} after {prev}"),
                ));
            }
            if t <= prev {
                skipped += 1;
                continue;
            }
        }
        rows.push(row);
    }
    let allowed = allowed_malformed(total);
    if skipped > allowed {
        return Err(Error::TooManyMalformed {
            path: name.to_string(),
            skipped,
            total,
            allowed,
        });
    }
    if rows.is_empty() {
        return Err(parse_error(name, 2, "no data rows"));
    }
    if skipped > 0 {
        log::warn!("{name}: skipped {skipped} malformed rows of {total}");
    }
    Ok(Parsed { rows, skipped })
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub fn parse_imu_log(input: impl Read, name: &str) -> Result<Parsed<ImuSample>> {
    read_table(
        input,
        name,
        &owned(&IMU_HEADER),
        |v| {
            let s = ImuSample::new(v[0], Vec3::new(v[1], v[2], v[3]), Vec3::new(v[4], v[5], v[6]));
            s.is_plausible().then_some(s)
        },
        |s| s.t,
    )
}

pub fn read_imu_log(path: impl AsRef<Path>) -> Result<Parsed<ImuSample>> {
    let path = path.as_ref();
    parse_imu_log(open(path)?, &path.display().to_string())
}

pub fn parse_encoder_log(input: impl Read, name: &str, n_legs: usize) -> Result<Parsed<EncoderSample>> {
    read_table(
        input,
        name,
        &encoder_header(n_legs),
        |v| {
            finite(v).then(|| EncoderSample {
                t: v[0],
                q: v[1..]
                    .chunks_exact(3)
                    .map(|c| JointAngles::new(c[0], c[1], c[2]))
                    .collect(),
            })
        },
        |s| s.t,
    )
}

pub fn read_encoder_log(path: impl AsRef<Path>, n_legs: usize) -> Result<Parsed<EncoderSample>> {
    let path = path.as_ref();
    parse_encoder_log(open(path)?, &path.display().to_string(), n_legs)
}

pub fn parse_contact_log(input: impl Read, name: &str, n_legs: usize) -> Result<Parsed<ContactSample>> {
    read_table(
        input,
        name,
        &contact_header(n_legs),
        |v| {
            let flags = v[1..].iter().map(|&c| (c == 0.0 || c == 1.0).then_some(c == 1.0));
            let flags: Option<Vec<bool>> = flags.collect();
            (v[0].is_finite()).then_some(())?;
            Some(ContactSample { t: v[0], flags: flags? })
        },
        |s| s.t,
    )
}

pub fn read_contact_log(path: impl AsRef<Path>, n_legs: usize) -> Result<Parsed<ContactSample>> {
    let path = path.as_ref();
    parse_contact_log(open(path)?, &path.display().to_string(), n_legs)
}

/// Quaternions within this distance of unit norm are kept as written.
const UNIT_TOLERANCE: f64 = 1e-12;

pub fn parse_truth(input: impl Read, name: &str) -> Result<PoseTrack> {
    let parsed = read_table(
        input,
        name,
        &owned(&TRUTH_HEADER),
        |v| {
            if !finite(v) {
                return None;
            }
            let q = Quaternion::new(v[4], v[5], v[6], v[7]);
            let n = q.norm();
            if !(n > 1e-6) {
                return None;
            }
            let q = if (n - 1.0).abs() <= UNIT_TOLERANCE {
                UnitQuaternion::new_unchecked(q)
            } else {
                UnitQuaternion::new_normalize(q)
            };
            Some((v[0], Vec3::new(v[1], v[2], v[3]), q))
        },
        |r| r.0,
    )?;
    let mut track = PoseTrack::default();
    for (t, p, q) in parsed.rows {
        track.t.push(t);
        track.p.push(p);
        track.q.push(q);
    }
    Ok(track)
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<PoseTrack> {
    let path = path.as_ref();
    parse_truth(open(path)?, &path.display().to_string())
}

/// Append `v` in shortest round-trip form.
pub(crate) fn push_f64(line: &mut String, v: f64) {
    if !line.is_empty() {
        line.push(',');
    }
    write!(line, "{v:?}").expect("writing to a String");
}

pub(crate) fn write_lines(
    out: &mut impl Write,
    header: &[String],
    rows: impl Iterator<Item = String>,
) -> std::io::Result<()> {
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        writeln!(out, "{row}")?;
    }
    out.flush()
}

pub(crate) fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn write_imu_log_to(out: &mut impl Write, samples: &[ImuSample]) -> std::io::Result<()> {
    let rows = samples.iter().map(|s| {
        let mut line = String::new();
        for v in [s.t].iter().chain(s.gyro.iter()).chain(s.accel.iter()) {
            push_f64(&mut line, *v);
        }
        line
    });
    write_lines(out, &owned(&IMU_HEADER), rows)
}

pub fn write_imu_log(path: impl AsRef<Path>, samples: &[ImuSample]) -> Result<()> {
    let path = path.as_ref();
    write_imu_log_to(&mut create(path)?, samples).map_err(|e| Error::io(path, e))
}

pub fn write_encoder_log_to(
    out: &mut impl Write,
    n_legs: usize,
    samples: &[EncoderSample],
) -> std::io::Result<()> {
    let rows = samples.iter().map(|s| {
        let mut line = String::new();
        push_f64(&mut line, s.t);
        for q in &s.q {
            for v in [q.abd, q.hip, q.knee] {
                push_f64(&mut line, v);
            }
        }
        line
    });
    write_lines(out, &encoder_header(n_legs), rows)
}

pub fn write_encoder_log(path: impl AsRef<Path>, n_legs: usize, samples: &[EncoderSample]) -> Result<()> {
    let path = path.as_ref();
    write_encoder_log_to(&mut create(path)?, n_legs, samples).map_err(|e| Error::io(path, e))
}

pub fn write_contact_log_to(
    out: &mut impl Write,
    n_legs: usize,
    samples: &[ContactSample],
) -> std::io::Result<()> {
    let rows = samples.iter().map(|s| {
        let mut line = String::new();
        push_f64(&mut line, s.t);
        for f in &s.flags {
            line.push_str(if *f { ",1" } else { ",0" });
        }
        line
    });
    write_lines(out, &contact_header(n_legs), rows)
}

pub fn write_contact_log(path: impl AsRef<Path>, n_legs: usize, samples: &[ContactSample]) -> Result<()> {
    let path = path.as_ref();
    write_contact_log_to(&mut create(path)?, n_legs, samples).map_err(|e| Error::io(path, e))
}

pub fn write_truth_to(out: &mut impl Write, track: &PoseTrack) -> std::io::Result<()> {
    let rows = (0..track.len()).map(|k| {
        let q = track.q[k].quaternion();
        let p = track.p[k];
        let mut line = String::new();
        for v in [track.t[k], p.x, p.y, p.z, q.w, q.i, q.j, q.k] {
            push_f64(&mut line, v);
        }
        line
    });
    write_lines(out, &owned(&TRUTH_HEADER), rows)
}

pub fn write_truth(path: impl AsRef<Path>, track: &PoseTrack) -> Result<()> {
    let path = path.as_ref();
    write_truth_to(&mut create(path)?, track).map_err(|e| Error::io(path, e))
}
