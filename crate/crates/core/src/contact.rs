//! Foot-contact detection from Leg-IMU accelerometer windows.
//!
//! A window of `2M+1` specific-force samples centred on epoch `k` is declared
//! in contact when the mean distance of the samples from a gravity-magnitude
//! vector along the window's mean direction is at most `gamma`.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math_nav::{Vec3, STANDARD_GRAVITY};
use crate::strapdown::ImuSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlrtConfig {
    /// Half-window M; the window holds `2M+1` samples.
    pub half_window: usize,
    /// Threshold gamma, m/s^2.
    pub gamma: f64,
    /// Gravity magnitude used in the statistic, m/s^2.
    pub g_mag: f64,
    /// Consecutive opposite decisions required to switch state.
    pub debounce: usize,
}

impl Default for GlrtConfig {
    fn default() -> Self {
        Self {
            half_window: 5,
            gamma: 0.3,
            g_mag: STANDARD_GRAVITY,
            debounce: 3,
        }
    }
}

impl GlrtConfig {
    pub fn window_len(&self) -> usize {
        2 * self.half_window + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.half_window < 1 {
            return Err(Error::Config("glrt.half_window must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config("glrt.gamma must be > 0".into()));
        }
        if !(self.g_mag > 0.0) {
            return Err(Error::Config("glrt.g_mag must be > 0".into()));
        }
        if self.debounce < 1 {
            return Err(Error::Config("glrt.debounce must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mean residual norm of a window against gravity along its mean direction.
pub fn glrt_statistic(window: &[Vec3], g_mag: f64) -> Result<f64> {
    if window.is_empty() || window.len() % 2 == 0 {
        return Err(Error::WindowLength {
            got: window.len(),
            expected: window.len() | 1,
        });
    }
    let n = window.len() as f64;
    let mean = window.iter().fold(Vec3::zeros(), |acc, f| acc + f) / n;
    let norm = mean.norm();
    if !(norm > 0.0) {
        return Err(Error::ZeroMeanWindow);
    }
    let g_dir = mean * (g_mag / norm);
    Ok(window.iter().map(|f| (f - g_dir).norm()).sum::<f64>() / n)
}

/// `true` iff the window statistic is at most `cfg.gamma`.
pub fn detect_contact(window: &[Vec3], cfg: &GlrtConfig) -> Result<bool> {
    if window.len() != cfg.window_len() {
        return Err(Error::WindowLength {
            got: window.len(),
            expected: cfg.window_len(),
        });
    }
    Ok(glrt_statistic(window, cfg.g_mag)? <= cfg.gamma)
}

/// The robot is static when every IMU, Body-IMU included, reports zero velocity.
pub fn detect_all_static(flags: &[bool]) -> bool {
    !flags.is_empty() && flags.iter().all(|&f| f)
}

/// Output of the streaming detector for one window centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactDecision {
    /// Timestamp of the window centre.
    pub t: f64,
    pub statistic: f64,
    /// Undebounced threshold decision.
    pub raw: bool,
    /// Debounced contact state.
    pub contact: bool,
}

/// Sliding-window GLRT detector for one IMU stream.
///
/// Decisions lag the input by `M` samples because the window is centred.
#[derive(Debug, Clone)]
pub struct ContactDetector {
    cfg: GlrtConfig,
    window: VecDeque<ImuSample>,
    state: Option<bool>,
    opposite_run: usize,
}

impl ContactDetector {
    pub fn new(cfg: GlrtConfig) -> Self {
        Self {
            cfg,
            window: VecDeque::with_capacity(cfg.window_len()),
            state: None,
            opposite_run: 0,
        }
    }

    pub fn config(&self) -> &GlrtConfig {
        &self.cfg
    }

    /// Feed one sample; returns the decision for the sample `M` steps back
    /// once the window is full.
    pub fn push(&mut self, sample: &ImuSample) -> Result<Option<ContactDecision>> {
        if self.window.len() == self.cfg.window_len() {
            self.window.pop_front();
        }
        self.window.push_back(*sample);
        if self.window.len() < self.cfg.window_len() {
            return Ok(None);
        }
        let accel: Vec<Vec3> = self.window.iter().map(|s| s.accel).collect();
        let statistic = glrt_statistic(&accel, self.cfg.g_mag)?;
        let raw = statistic <= self.cfg.gamma;
        let contact = self.debounce(raw);
        Ok(Some(ContactDecision {
            t: self.window[self.cfg.half_window].t,
            statistic,
            raw,
            contact,
        }))
    }

    fn debounce(&mut self, raw: bool) -> bool {
        match self.state {
            None => {
                self.state = Some(raw);
                raw
            }
            Some(s) if s == raw => {
                self.opposite_run = 0;
                s
            }
            Some(s) => {
                self.opposite_run += 1;
                if self.opposite_run >= self.cfg.debounce {
                    self.opposite_run = 0;
                    self.state = Some(raw);
                    raw
                } else {
                    s
                }
            }
        }
    }
}

/// Debounced per-leg contact flags with their last transition times.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContactState {
    pub flags: Vec<bool>,
    pub last_transition: Vec<f64>,
}

impl ContactState {
    pub fn new(n: usize, t0: f64, initial: bool) -> Self {
        Self {
            flags: vec![initial; n],
            last_transition: vec![t0; n],
        }
    }

    /// Record the flag of `leg` at time `t`; returns true on a transition.
    pub fn update(&mut self, leg: usize, flag: bool, t: f64) -> bool {
        if self.flags[leg] == flag {
            return false;
        }
        self.flags[leg] = flag;
        self.last_transition[leg] = self.last_transition[leg].max(t);
        true
    }
}

/// Run the detector over a whole stream. Returns one decision per input
/// sample; the first and last `M` samples, which have no full window, copy
/// the nearest available decision.
pub fn detect_stream(samples: &[ImuSample], cfg: &GlrtConfig) -> Result<Vec<ContactDecision>> {
    let mut det = ContactDetector::new(*cfg);
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        if let Some(d) = det.push(s)? {
            out.push(d);
        }
    }
    if out.is_empty() {
        return Ok(Vec::new());
    }
    let m = cfg.half_window;
    let first = out[0];
    let last = *out.last().expect("non-empty");
    let mut full = Vec::with_capacity(samples.len());
    for s in &samples[..m.min(samples.len())] {
        full.push(ContactDecision { t: s.t, ..first });
    }
    full.extend(out);
    for s in &samples[full.len()..] {
        full.push(ContactDecision { t: s.t, ..last });
    }
    Ok(full)
}

/// Statistics of every full window in a stream.
pub fn window_statistics(accel: &[Vec3], cfg: &GlrtConfig) -> Result<Vec<f64>> {
    accel
        .windows(cfg.window_len())
        .map(|w| glrt_statistic(w, cfg.g_mag))
        .collect()
}

fn percentile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let idx = ((values.len() - 1) as f64 * q).round() as usize;
    values[idx]
}

/// Threshold from a stationary segment: three times the 99th percentile of
/// the rest-window statistic, never below `floor`.
pub fn calibrate_gamma_from_rest(rest_accel: &[Vec3], cfg: &GlrtConfig, floor: f64) -> Result<f64> {
    let mut stats = window_statistics(rest_accel, cfg)?;
    if stats.is_empty() {
        return Err(Error::Config(format!(
            "GLRT calibration needs at least {} stationary samples",
            cfg.window_len()
        )));
    }
    Ok((3.0 * percentile(&mut stats, 0.99)).max(floor))
}

/// Threshold maximizing F1 of the raw decision against a labelled schedule.
/// `labels[i]` is the true contact flag of the window centred on sample `i + M`.
pub fn calibrate_gamma_from_schedule(
    streams: &[(&[Vec3], &[bool])],
    cfg: &GlrtConfig,
) -> Result<f64> {
    let m = cfg.half_window;
    let mut scored = Vec::new();
    for (accel, labels) in streams {
        let stats = window_statistics(accel, cfg)?;
        for (i, s) in stats.iter().enumerate() {
            scored.push((*s, labels[i + m]));
        }
    }
    if scored.is_empty() {
        return Err(Error::Config("GLRT calibration: no labelled windows".into()));
    }
    scored.sort_by(|a, b| a.0.total_cmp(&b.0));
    let positives = scored.iter().filter(|s| s.1).count();
    let mut best = (f64::NEG_INFINITY, scored[0].0);
    let mut tp = 0usize;
    let mut fp = 0usize;
    for (i, (stat, label)) in scored.iter().enumerate() {
        if *label {
            tp += 1;
        } else {
            fp += 1;
        }
        // Only threshold between distinct statistics.
        if i + 1 < scored.len() && scored[i + 1].0 == *stat {
            continue;
        }
        let f1 = 2.0 * tp as f64 / (2 * tp + fp + (positives - tp)) as f64;
        if f1 > best.0 {
            let next = scored.get(i + 1).map_or(*stat, |s| s.0);
            best = (f1, 0.5 * (stat + next));
        }
    }
    Ok(best.1)
}

/// Contiguous `true` runs of `flags` as `(t_start, t_end)` pairs.
pub fn contact_intervals(times: &[f64], flags: &[bool]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut start: Option<f64> = None;
    for (i, (&t, &f)) in times.iter().zip(flags).enumerate() {
        match (start, f) {
            (None, true) => start = Some(t),
            (Some(s), false) => {
                out.push((s, times[i - 1]));
                start = None;
            }
            _ => {}
        }
    }
    if let (Some(s), Some(&t)) = (start, times.last()) {
        out.push((s, t));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const G: f64 = STANDARD_GRAVITY;

    fn rest(n: usize) -> Vec<Vec3> {
        vec![Vec3::new(0.0, 0.0, G); n]
    }

    #[test]
    fn perfect_rest_is_zero() {
        assert_eq!(glrt_statistic(&rest(11), G).unwrap(), 0.0);
    }

    #[test]
    fn alternating_window_hand_evaluated() {
        // Window [9.0, 10.6133, 9.0] along z: mean 9.5377667, direction +z,
        // residuals |9.0 - g|, |10.6133 - g|, |9.0 - g|.
        let w = [
            Vec3::new(0.0, 0.0, 9.0),
            Vec3::new(0.0, 0.0, 10.61330),
            Vec3::new(0.0, 0.0, 9.0),
        ];
        let expected = (0.80665 + 0.80665 + 0.80665) / 3.0;
        assert!((glrt_statistic(&w, G).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn spike_raises_statistic() {
        let mut w = rest(11);
        let base = glrt_statistic(&w, G).unwrap();
        w[5] = Vec3::new(0.0, 0.0, 20.0);
        assert!(glrt_statistic(&w, G).unwrap() > base);
    }

    #[test]
    fn zero_mean_window_is_a_fault() {
        let w = [Vec3::x(), -Vec3::x(), Vec3::zeros()];
        assert!(matches!(glrt_statistic(&w, G), Err(Error::ZeroMeanWindow)));
    }

    #[test]
    fn decision_rule() {
        let cfg = GlrtConfig {
            gamma: 0.5,
            ..GlrtConfig::default()
        };
        assert!(detect_contact(&rest(11), &cfg).unwrap());
        assert!(detect_contact(&rest(7), &cfg).is_err());

        // Boundary is inclusive.
        let w: Vec<Vec3> = (0..11)
            .map(|i| Vec3::new(0.0, 0.0, if i % 2 == 0 { 9.5 } else { 10.1 }))
            .collect();
        let stat = glrt_statistic(&w, G).unwrap();
        let cfg = GlrtConfig {
            gamma: stat,
            ..cfg
        };
        assert!(detect_contact(&w, &cfg).unwrap());
    }

    #[test]
    fn all_static_examples() {
        assert!(detect_all_static(&[true; 5]));
        assert!(!detect_all_static(&[false, true, true, true, true]));
        assert!(!detect_all_static(&[]));
    }

    #[test]
    fn streaming_detector_lags_by_half_window() {
        let cfg = GlrtConfig::default();
        let mut det = ContactDetector::new(cfg);
        let mut first = None;
        for k in 0..20 {
            let s = ImuSample::new(k as f64 * 0.005, Vec3::zeros(), Vec3::new(0.0, 0.0, G));
            if let Some(d) = det.push(&s).unwrap() {
                first.get_or_insert((k, d));
            }
        }
        let (k, d) = first.unwrap();
        assert_eq!(k, 10);
        assert!((d.t - 0.025).abs() < 1e-15);
        assert!(d.contact);
    }

    #[test]
    fn debounce_suppresses_short_runs() {
        let cfg = GlrtConfig {
            half_window: 1,
            debounce: 4,
            ..GlrtConfig::default()
        };
        let mut det = ContactDetector::new(cfg);
        let loud = Vec3::new(0.0, 5.0, G);
        // One spike taints three windows, one short of flipping the state.
        let pattern = [0, 0, 0, 0, 1, 0, 0, 0, 0];
        let mut contacts = Vec::new();
        for (k, &p) in pattern.iter().enumerate() {
            let a = if p == 1 { loud } else { Vec3::new(0.0, 0.0, G) };
            if let Some(d) = det.push(&ImuSample::new(k as f64, Vec3::zeros(), a)).unwrap() {
                contacts.push(d.contact);
            }
        }
        assert!(contacts.iter().all(|&c| c), "{contacts:?}");
    }

    #[test]
    fn contact_state_transitions() {
        let mut cs = ContactState::new(2, 0.0, true);
        assert!(!cs.update(0, true, 1.0));
        assert!(cs.update(0, false, 2.0));
        assert_eq!(cs.last_transition, vec![2.0, 0.0]);
    }

    #[test]
    fn intervals_from_flags() {
        let t = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
        let f = [true, true, false, false, true, true];
        assert_eq!(contact_intervals(&t, &f), vec![(0.0, 1.0), (4.0, 5.0)]);
    }

    #[test]
    fn schedule_calibration_separates_classes() {
        let cfg = GlrtConfig {
            half_window: 1,
            ..GlrtConfig::default()
        };
        let mut accel = Vec::new();
        let mut labels = Vec::new();
        for k in 0..200 {
            let moving = (k / 20) % 2 == 1;
            let wobble = if k % 2 == 0 { 1.0 } else { -1.0 };
            accel.push(if moving {
                Vec3::new(3.0 * wobble, 0.0, G)
            } else {
                Vec3::new(0.01 * wobble, 0.0, G)
            });
            labels.push(!moving);
        }
        let gamma = calibrate_gamma_from_schedule(&[(&accel, &labels)], &cfg).unwrap();
        assert!(gamma > 0.02 && gamma < 3.0, "gamma {gamma}");
    }

    fn residual_window() -> impl Strategy<Value = Vec<Vec3>> {
        prop::collection::vec(prop::array::uniform3(-2.0..2.0f64), 5).prop_map(|rs| {
            // Zero-mean residuals keep the window mean exactly on +z.
            let rs: Vec<Vec3> = rs.into_iter().map(Vec3::from).collect();
            let mean = rs.iter().fold(Vec3::zeros(), |a, r| a + r) / rs.len() as f64;
            rs.into_iter().map(|r| r - mean).collect()
        })
    }

    proptest! {
        #[test]
        fn residual_scaling_is_homogeneous(res in residual_window(), scale in 0.1..3.0f64) {
            let up = Vec3::new(0.0, 0.0, G);
            let base: Vec<Vec3> = res.iter().map(|r| up + r).collect();
            let scaled: Vec<Vec3> = res.iter().map(|r| up + r * scale).collect();
            let a = glrt_statistic(&base, G).unwrap();
            let b = glrt_statistic(&scaled, G).unwrap();
            prop_assert!((b - scale * a).abs() < 1e-9 * (1.0 + b));
        }

        #[test]
        fn permutation_invariant(res in residual_window(), rot in 0usize..5) {
            let w: Vec<Vec3> = res.iter().map(|r| Vec3::new(0.0, 0.0, G) + r).collect();
            let mut p = w.clone();
            p.rotate_left(rot);
            p.swap(0, 4);
            let a = glrt_statistic(&w, G).unwrap();
            let b = glrt_statistic(&p, G).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(a >= 0.0);
        }
    }
}
