//! Per-IMU error-state model.
//!
//! Error state of one IMU, in order: position, velocity, attitude, gyro bias,
//! accelerometer bias. With true state `x` and estimate `x_hat`:
//!
//! ```text
//! p_hat = p + dp          v_hat = v + dv
//! R_hat = exp(-dphi) R    b_hat = b - db
//! ```
//!
//! so a correction subtracts `dp`, `dv`, rotates by `exp(dphi)` on the left
//! and adds `db`.

use nalgebra::{SMatrix, SVector};

use super::config::ImuNoise;
use crate::math_nav::{exp_so3, log_so3, right_jacobian, skew, Mat3, Rotation, Vec3};
use crate::strapdown::{ImuSample, NavState};

pub const BLOCK: usize = 15;
pub const IP: usize = 0;
pub const IV: usize = 3;
pub const IPHI: usize = 6;
pub const IBG: usize = 9;
pub const IBA: usize = 12;

pub type Mat15 = SMatrix<f64, 15, 15>;
pub type Vec15 = SVector<f64, 15>;
pub type Mat3x15 = SMatrix<f64, 3, 15>;

fn seg(dx: &Vec15, at: usize) -> Vec3 {
    Vec3::new(dx[at], dx[at + 1], dx[at + 2])
}

/// Apply an estimated error to a nominal state.
pub fn apply_correction(nav: &NavState, dx: &Vec15) -> NavState {
    NavState {
        p: nav.p - seg(dx, IP),
        v: nav.v - seg(dx, IV),
        r: exp_so3(&seg(dx, IPHI)) * nav.r,
        bg: nav.bg + seg(dx, IBG),
        ba: nav.ba + seg(dx, IBA),
    }
}

/// Estimate obtained by perturbing `truth` with error `dx`; exact inverse of
/// [`apply_correction`].
pub fn inject_error(truth: &NavState, dx: &Vec15) -> NavState {
    NavState {
        p: truth.p + seg(dx, IP),
        v: truth.v + seg(dx, IV),
        r: exp_so3(&-seg(dx, IPHI)) * truth.r,
        bg: truth.bg - seg(dx, IBG),
        ba: truth.ba - seg(dx, IBA),
    }
}

/// Error of `estimate` with respect to `truth`.
pub fn error_between(truth: &NavState, estimate: &NavState) -> Vec15 {
    let mut dx = Vec15::zeros();
    dx.fixed_rows_mut::<3>(IP).copy_from(&(estimate.p - truth.p));
    dx.fixed_rows_mut::<3>(IV).copy_from(&(estimate.v - truth.v));
    dx.fixed_rows_mut::<3>(IPHI)
        .copy_from(&log_so3(&(truth.r * estimate.r.inverse())));
    dx.fixed_rows_mut::<3>(IBG).copy_from(&(truth.bg - estimate.bg));
    dx.fixed_rows_mut::<3>(IBA).copy_from(&(truth.ba - estimate.ba));
    dx
}

fn put(m: &mut Mat15, r: usize, c: usize, block: &Mat3) {
    m.fixed_view_mut::<3, 3>(r, c).copy_from(block);
}

/// Discrete transition of the trapezoidal mechanization step from `prev` to
/// `next`, linearized at the estimate.
///
/// `prev_r` and `next_r` are the attitudes at both ends; `prev` and `cur`
/// are the bias-corrected samples used for the step.
pub fn transition_matrix(
    prev_r: &Rotation,
    next_r: &Rotation,
    prev: &ImuSample,
    cur: &ImuSample,
    noise: &ImuNoise,
) -> Mat15 {
    let dt = cur.t - prev.t;
    let half = 0.5 * dt;
    let i3 = Mat3::identity();
    let theta = (prev.gyro + cur.gyro) * half;
    let r0 = prev_r.matrix();
    let r1 = next_r.matrix();
    let a0 = skew(&(r0 * prev.accel));
    let a1 = skew(&(r1 * cur.accel));

    let phi_bg = -(r1 * right_jacobian(&theta)) * dt;
    let v_phi = (a0 + a1) * half;
    let v_bg = a1 * phi_bg * half;
    let v_ba = (r0 + r1) * half;

    let mut m = Mat15::identity();
    put(&mut m, IPHI, IBG, &phi_bg);
    put(&mut m, IV, IPHI, &v_phi);
    put(&mut m, IV, IBG, &v_bg);
    put(&mut m, IV, IBA, &v_ba);
    put(&mut m, IP, IV, &(i3 * dt));
    put(&mut m, IP, IPHI, &(v_phi * half));
    put(&mut m, IP, IBG, &(v_bg * half));
    put(&mut m, IP, IBA, &(v_ba * half));
    put(&mut m, IBG, IBG, &(i3 * (-dt / noise.gyro_bias_tau).exp()));
    put(&mut m, IBA, IBA, &(i3 * (-dt / noise.accel_bias_tau).exp()));
    m
}

/// Continuous noise intensity on the error state.
pub fn continuous_noise(noise: &ImuNoise) -> Mat15 {
    let mut q = Mat15::zeros();
    let vals = [
        (IV, noise.accel_noise.powi(2)),
        (IPHI, noise.gyro_noise.powi(2)),
        (IBG, 2.0 * noise.gyro_bias_sigma.powi(2) / noise.gyro_bias_tau),
        (IBA, 2.0 * noise.accel_bias_sigma.powi(2) / noise.accel_bias_tau),
    ];
    for (at, v) in vals {
        for k in 0..3 {
            q[(at + k, at + k)] = v;
        }
    }
    q
}

/// Discrete process noise, trapezoidal in the transition.
pub fn discrete_noise(phi: &Mat15, noise: &ImuNoise, dt: f64) -> Mat15 {
    let qc = continuous_noise(noise);
    let qd = (phi * qc * phi.transpose() + qc) * (0.5 * dt);
    (qd + qd.transpose()) * 0.5
}

/// Predicted velocity of the point `lever` (IMU frame) and its Jacobian.
///
/// `gyro` is the bias-corrected rate; the measurement of a stationary point
/// is zero, so the residual equals the prediction.
pub fn zupt_model(nav: &NavState, gyro: &Vec3, lever: &Vec3) -> (Vec3, Mat3x15) {
    let r = nav.r.matrix();
    let rel = r * gyro.cross(lever);
    let h_pred = nav.v + rel;
    let mut h = Mat3x15::zeros();
    h.fixed_view_mut::<3, 3>(0, IV).copy_from(&Mat3::identity());
    h.fixed_view_mut::<3, 3>(0, IPHI).copy_from(&skew(&rel));
    h.fixed_view_mut::<3, 3>(0, IBG).copy_from(&(-r * skew(lever)));
    (h_pred, h)
}

/// Predicted foot position in the body frame from a Body-IMU and a Leg-IMU
/// state, with Jacobians with respect to both error blocks.
///
/// `r_e`, `p_e` are the Body-IMU extrinsics (rotation to body, origin in body).
pub fn relpos_model(
    body: &NavState,
    leg: &NavState,
    lever: &Vec3,
    r_e: &Rotation,
    p_e: &Vec3,
) -> (Vec3, Mat3x15, Mat3x15) {
    let foot_off = leg.r * lever;
    let d = leg.p + foot_off - body.p;
    let a = r_e.matrix() * body.r.matrix().transpose();
    let pred = a * d + p_e;
    let mut hb = Mat3x15::zeros();
    hb.fixed_view_mut::<3, 3>(0, IP).copy_from(&-a);
    hb.fixed_view_mut::<3, 3>(0, IPHI).copy_from(&(-a * skew(&d)));
    let mut hl = Mat3x15::zeros();
    hl.fixed_view_mut::<3, 3>(0, IP).copy_from(&a);
    hl.fixed_view_mut::<3, 3>(0, IPHI).copy_from(&(a * skew(&foot_off)));
    (pred, hb, hl)
}

/// Predicted foot position in the body frame from the Body-IMU state and a
/// world-frame foot position, with Jacobians for the body block and the foot.
pub fn foot_point_model(
    body: &NavState,
    foot: &Vec3,
    r_e: &Rotation,
    p_e: &Vec3,
) -> (Vec3, Mat3x15, Mat3) {
    let d = foot - body.p;
    let a = r_e.matrix() * body.r.matrix().transpose();
    let pred = a * d + p_e;
    let mut hb = Mat3x15::zeros();
    hb.fixed_view_mut::<3, 3>(0, IP).copy_from(&-a);
    hb.fixed_view_mut::<3, 3>(0, IPHI).copy_from(&(-a * skew(&d)));
    (pred, hb, a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math_nav::{gravity_vector, EulerAngles, STANDARD_GRAVITY};
    use crate::strapdown::{correct_sample, mechanize};

    fn nav() -> NavState {
        NavState {
            p: Vec3::new(1.0, -2.0, 0.3),
            v: Vec3::new(0.4, 0.1, -0.05),
            r: EulerAngles::new(0.2, -0.3, 1.1).to_rotation(),
            bg: Vec3::new(0.01, -0.02, 0.005),
            ba: Vec3::new(0.05, 0.02, -0.1),
        }
    }

    #[test]
    fn injection_and_correction_are_inverse() {
        let x = nav();
        let dx = Vec15::from_fn(|i, _| 0.01 * (i as f64 - 7.0));
        let est = inject_error(&x, &dx);
        let back = apply_correction(&est, &dx);
        assert!((back.p - x.p).amax() < 1e-15);
        assert!((back.r.matrix() - x.r.matrix()).amax() < 1e-15);
        assert!((error_between(&x, &est) - dx).amax() < 1e-12);
    }

    fn relative_frobenius(a: &SMatrix<f64, 3, 15>, b: &SMatrix<f64, 3, 15>) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn zupt_jacobian_matches_finite_differences() {
        let x = nav();
        let raw_gyro = Vec3::new(0.8, -1.5, 0.4);
        let lever = Vec3::new(0.01, 0.02, -0.043);
        let eval = |dx: &Vec15| {
            let est = inject_error(&x, dx);
            zupt_model(&est, &(raw_gyro - est.bg), &lever).0
        };
        let (_, h) = zupt_model(&x, &(raw_gyro - x.bg), &lever);
        let eps = 1e-6;
        let mut fd = Mat3x15::zeros();
        for j in 0..BLOCK {
            let mut e = Vec15::zeros();
            e[j] = eps;
            fd.set_column(j, &((eval(&e) - eval(&-e)) / (2.0 * eps)));
        }
        assert!(relative_frobenius(&h, &fd) < 1e-6);
    }

    #[test]
    fn relpos_jacobians_match_finite_differences() {
        let body = nav();
        let mut leg = nav();
        leg.p += Vec3::new(0.2, 0.1, -0.25);
        leg.r = EulerAngles::new(-0.1, 0.7, 0.9).to_rotation();
        let lever = Vec3::new(0.0, 0.0, -0.043);
        let r_e = EulerAngles::new(0.01, -0.02, 0.03).to_rotation();
        let p_e = Vec3::new(0.05, 0.0, 0.02);
        let (_, hb, hl) = relpos_model(&body, &leg, &lever, &r_e, &p_e);
        let eps = 1e-6;
        let mut fb = Mat3x15::zeros();
        let mut fl = Mat3x15::zeros();
        for j in 0..BLOCK {
            let mut e = Vec15::zeros();
            e[j] = eps;
            let f = |b: &NavState, l: &NavState| relpos_model(b, l, &lever, &r_e, &p_e).0;
            let cb = f(&inject_error(&body, &e), &leg) - f(&inject_error(&body, &-e), &leg);
            let cl = f(&body, &inject_error(&leg, &e)) - f(&body, &inject_error(&leg, &-e));
            fb.set_column(j, &(cb / (2.0 * eps)));
            fl.set_column(j, &(cl / (2.0 * eps)));
        }
        assert!(relative_frobenius(&hb, &fb) < 1e-6);
        assert!(relative_frobenius(&hl, &fl) < 1e-6);
    }

    #[test]
    fn transition_matches_finite_differences() {
        let g = gravity_vector(STANDARD_GRAVITY);
        let noise = ImuNoise {
            gyro_bias_tau: 1e12,
            accel_bias_tau: 1e12,
            ..ImuNoise::default()
        };
        let x = nav();
        let dt = 0.005;
        let raw0 = ImuSample::new(0.0, Vec3::new(0.9, -1.2, 2.0), Vec3::new(3.0, -2.0, 11.0));
        let raw1 = ImuSample::new(dt, Vec3::new(1.1, -0.8, 1.7), Vec3::new(2.5, -1.0, 9.0));
        let step = |s: &NavState| {
            let c0 = correct_sample(&raw0, &s.bg, &s.ba);
            let c1 = correct_sample(&raw1, &s.bg, &s.ba);
            mechanize(s, &c0, &c1, &g).unwrap()
        };
        let x1 = step(&x);
        let c0 = correct_sample(&raw0, &x.bg, &x.ba);
        let c1 = correct_sample(&raw1, &x.bg, &x.ba);
        let phi = transition_matrix(&x.r, &x1.r, &c0, &c1, &noise);
        let eps = 1e-6;
        let mut fd = Mat15::zeros();
        for j in 0..BLOCK {
            let mut e = Vec15::zeros();
            e[j] = eps;
            let plus = error_between(&x1, &step(&inject_error(&x, &e)));
            let minus = error_between(&x1, &step(&inject_error(&x, &-e)));
            fd.set_column(j, &((plus - minus) / (2.0 * eps)));
        }
        let rel = (phi - fd).norm() / fd.norm();
        assert!(rel < 1e-5, "relative error {rel:e}");
    }

    #[test]
    fn discrete_noise_is_symmetric_psd() {
        let noise = ImuNoise::default();
        let x = nav();
        let s0 = ImuSample::new(0.0, Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.0, 0.0, 9.8));
        let s1 = ImuSample::new(0.005, Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.0, 0.1, 9.8));
        let phi = transition_matrix(&x.r, &x.r, &s0, &s1, &noise);
        let q = discrete_noise(&phi, &noise, 0.005);
        assert_eq!(q, q.transpose());
        assert!(q.symmetric_eigenvalues().min() > -1e-20);
    }
}
