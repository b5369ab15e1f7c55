//! Rotation algebra and frame conventions shared by the estimator.
//!
//! Conventions used throughout the crate:
//! - A [`Rotation`] maps child-frame vectors into the parent frame
//!   (`v_world = R * v_imu`).
//! - The world frame is z-up; gravity is `[0, 0, -g]`.
//! - Euler angles are Z-Y-X (yaw, pitch, roll): `R = Rz(yaw) * Ry(pitch) * Rx(roll)`.

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Rotation = Rotation3<f64>;

/// Standard gravity in m/s^2.
pub const STANDARD_GRAVITY: f64 = 9.806_65;

/// Half-width of the band around pi where [`log_so3`] switches to the
/// symmetric-part axis extraction.
const NEAR_PI_BAND: f64 = 1e-4;

/// World gravity vector for a z-up frame.
pub fn gravity_vector(g_mag: f64) -> Vec3 {
    Vec3::new(0.0, 0.0, -g_mag)
}

/// Cross-product matrix: `skew(v) * w == v.cross(&w)`.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`skew`] on the antisymmetric part of `m`.
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    )
}

/// Rodrigues' formula.
pub fn exp_so3(phi: &Vec3) -> Rotation {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    let k2 = k * k;
    let (a, b) = if theta2 < 1e-12 {
        // sin(t)/t and (1-cos t)/t^2 to fourth order
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        let half = (0.5 * theta).sin();
        (theta.sin() / theta, 2.0 * half * half / theta2)
    };
    Rotation::from_matrix_unchecked(Mat3::identity() + k * a + k2 * b)
}

/// Principal-branch logarithm, angle in `[0, pi]`.
pub fn log_so3(r: &Rotation) -> Vec3 {
    let m = r.matrix();
    let w = vee(m);
    let sin_theta = w.norm();
    let cos_theta = 0.5 * (m.trace() - 1.0);
    let theta = sin_theta.atan2(cos_theta);

    if theta < 1e-8 {
        return w * (1.0 + theta * theta / 6.0);
    }
    if std::f64::consts::PI - theta > NEAR_PI_BAND {
        return w * (theta / sin_theta);
    }

    // Near pi: (R + R^T)/2 = cos(t) I + (1 - cos(t)) a a^T; take the column
    // with the largest diagonal entry.
    let sym = (m + m.transpose()) * 0.5;
    let aat = (sym - Mat3::identity() * cos_theta) / (1.0 - cos_theta);
    let i = (0..3)
        .max_by(|&a, &b| aat[(a, a)].total_cmp(&aat[(b, b)]))
        .unwrap_or(0);
    let mut axis = aat.column(i).into_owned() / aat[(i, i)].max(f64::MIN_POSITIVE).sqrt();
    axis.normalize_mut();
    if axis.dot(&w) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Rotation angle of `r` in radians.
pub fn rotation_angle(r: &Rotation) -> f64 {
    log_so3(r).norm()
}

/// Right Jacobian of SO(3): `exp(phi + d) ~= exp(phi) * exp(J_r(phi) d)`.
pub fn right_jacobian(phi: &Vec3) -> Mat3 {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    let k2 = k * k;
    let (a, b) = if theta2 < 1e-10 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        let theta = theta2.sqrt();
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Mat3::identity() - k * a + k2 * b
}

/// Re-orthonormalize a rotation that accumulated round-off.
pub fn orthonormalize(r: &Rotation) -> Rotation {
    Rotation::from_matrix_eps(r.matrix(), 1e-15, 20, *r)
}

/// Roll, pitch and yaw in radians, Z-Y-X convention.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct EulerAngles {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
}

impl EulerAngles {
    pub fn new(roll: f64, pitch: f64, yaw: f64) -> Self {
        Self { roll, pitch, yaw }
    }

    pub fn from_rotation(r: &Rotation) -> Self {
        let m = r.matrix();
        let pitch = (-m[(2, 0)]).clamp(-1.0, 1.0).asin();
        let roll = m[(2, 1)].atan2(m[(2, 2)]);
        let yaw = m[(1, 0)].atan2(m[(0, 0)]);
        Self { roll, pitch, yaw }
    }

    pub fn to_rotation(&self) -> Rotation {
        let rz = Rotation::from_axis_angle(&Vec3::z_axis(), self.yaw);
        let ry = Rotation::from_axis_angle(&Vec3::y_axis(), self.pitch);
        let rx = Rotation::from_axis_angle(&Vec3::x_axis(), self.roll);
        rz * ry * rx
    }
}

/// Wrap an angle to `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let w = a.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}

/// Roll and pitch that level an IMU from its mean specific force over a
/// stationary window. Yaw is unobservable from gravity and is taken as zero.
pub fn static_level_align(mean_accel: &Vec3, g_mag: f64) -> Result<(f64, f64)> {
    let norm = mean_accel.norm();
    if !norm.is_finite() || (norm - g_mag).abs() > 0.2 * g_mag {
        return Err(Error::NotStatic {
            norm,
            gravity: g_mag,
        });
    }
    let roll = mean_accel.y.atan2(mean_accel.z);
    let pitch = (-mean_accel.x).atan2(mean_accel.y.hypot(mean_accel.z));
    Ok((roll, pitch))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn taylor_exp(phi: &Vec3, terms: usize) -> Mat3 {
        let k = skew(phi);
        let mut sum = Mat3::identity();
        let mut term = Mat3::identity();
        for n in 1..terms {
            term = term * k / n as f64;
            sum += term;
        }
        sum
    }

    #[test]
    fn skew_identities() {
        let e1 = Vec3::x();
        let e2 = Vec3::y();
        assert_eq!(skew(&e1) * e2, Vec3::z());
        let v = Vec3::new(1.0, 2.0, 3.0);
        assert_eq!(skew(&v) * v, Vec3::zeros());
        assert_eq!(skew(&v) + skew(&v).transpose(), Mat3::zeros());
        assert_eq!(vee(&skew(&v)), v);
    }

    #[test]
    fn exp_examples() {
        assert_eq!(*exp_so3(&Vec3::zeros()).matrix(), Mat3::identity());
        let r = exp_so3(&Vec3::new(FRAC_PI_2, 0.0, 0.0));
        assert!((r * Vec3::y() - Vec3::z()).norm() < 1e-15);
        let phi = Vec3::new(0.1, 0.2, 0.3);
        let diff = exp_so3(&phi).matrix() - taylor_exp(&phi, 20);
        assert!(diff.amax() < 1e-12, "{diff}");
    }

    #[test]
    fn log_examples() {
        assert_eq!(log_so3(&Rotation::identity()), Vec3::zeros());
        let phi = Vec3::new(0.0, 0.0, 1.0);
        assert!((log_so3(&exp_so3(&phi)) - phi).norm() < 1e-9);
    }

    #[test]
    fn log_near_pi_uses_symmetric_branch() {
        for axis in [Vec3::x(), Vec3::new(1.0, -2.0, 0.5).normalize()] {
            for theta in [PI, PI - 1e-6, PI - 5e-5, PI - 2e-4] {
                let phi = axis * theta;
                let back = log_so3(&exp_so3(&phi));
                // At exactly pi the sign of the axis is ambiguous.
                let err = (back - phi).norm().min((back + phi).norm());
                assert!(err < 1e-7, "theta={theta} err={err}");
            }
        }
    }

    #[test]
    fn right_jacobian_matches_finite_difference() {
        let phi = Vec3::new(0.3, -0.2, 0.5);
        let jr = right_jacobian(&phi);
        let base = exp_so3(&phi);
        let h = 1e-6;
        for i in 0..3 {
            let mut d = Vec3::zeros();
            d[i] = h;
            let plus = log_so3(&(base.inverse() * exp_so3(&(phi + d))));
            let minus = log_so3(&(base.inverse() * exp_so3(&(phi - d))));
            let col = (plus - minus) / (2.0 * h);
            assert!((col - jr.column(i)).norm() < 1e-8);
        }
    }

    #[test]
    fn euler_round_trip() {
        let e = EulerAngles::new(0.3, -0.7, 2.5);
        let back = EulerAngles::from_rotation(&e.to_rotation());
        assert!((back.roll - e.roll).abs() < 1e-12);
        assert!((back.pitch - e.pitch).abs() < 1e-12);
        assert!((back.yaw - e.yaw).abs() < 1e-12);
    }

    #[test]
    fn level_align_examples() {
        let g = STANDARD_GRAVITY;
        let (r, p) = static_level_align(&Vec3::new(0.0, 0.0, g), g).unwrap();
        assert_eq!((r, p), (0.0, 0.0));

        // Specific force of a stationary IMU rolled +30 deg: R^T * [0, 0, g].
        let att = EulerAngles::new(30f64.to_radians(), 0.0, 0.0).to_rotation();
        let f = att.inverse() * Vec3::new(0.0, 0.0, g);
        assert!((f - Vec3::new(0.0, g * 0.5, g * 30f64.to_radians().cos())).norm() < 1e-12);
        let (r, p) = static_level_align(&f, g).unwrap();
        assert!((r - 30f64.to_radians()).abs() < 1e-6);
        assert!(p.abs() < 1e-6);

        assert!(matches!(
            static_level_align(&Vec3::new(0.5, 0.0, 0.0), g),
            Err(Error::NotStatic { .. })
        ));
    }

    #[test]
    fn angle_matches_trace_formula() {
        let r1 = exp_so3(&Vec3::new(0.4, -1.1, 0.9));
        let r2 = exp_so3(&Vec3::new(-0.3, 0.2, 1.7));
        let rel = r1 * r2.inverse();
        let trace_angle = ((rel.matrix().trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos();
        assert!((rotation_angle(&rel) - trace_angle).abs() < 1e-9);
    }

    fn vec3() -> impl Strategy<Value = Vec3> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64).prop_map(|(x, y, z)| Vec3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn exp_log_round_trip(dir in vec3(), scale in 0.0..(PI - 0.1)) {
            prop_assume!(dir.norm() > 1e-3);
            let phi = dir.normalize() * scale;
            prop_assert!((log_so3(&exp_so3(&phi)) - phi).norm() < 1e-9);
        }

        #[test]
        fn exp_composition_is_identity(dir in vec3(), scale in 0.0..3.0f64) {
            let phi = dir * scale;
            let prod = exp_so3(&phi) * exp_so3(&-phi);
            prop_assert!((prod.matrix() - Mat3::identity()).amax() < 1e-12);
        }

        #[test]
        fn exp_is_a_rotation(phi in vec3()) {
            let r = exp_so3(&(phi * 3.0));
            let m = r.matrix();
            prop_assert!((m * m.transpose() - Mat3::identity()).amax() < 1e-9);
            prop_assert!((m.determinant() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn level_align_inverts_known_attitude(
            roll in -80f64..80.0, pitch in -80f64..80.0, yaw in -180f64..180.0
        ) {
            let g = STANDARD_GRAVITY;
            let att = EulerAngles::new(roll.to_radians(), pitch.to_radians(), yaw.to_radians());
            let f = att.to_rotation().inverse() * Vec3::new(0.0, 0.0, g);
            let (r, p) = static_level_align(&f, g).unwrap();
            prop_assert!((r - att.roll).abs() < 1e-6);
            prop_assert!((p - att.pitch).abs() < 1e-6);
        }
    }
}
