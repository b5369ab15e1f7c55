//! Kinematics of a three-joint point-foot leg (abduction, hip, knee).
//!
//! At zero angles the leg hangs straight down. Abduction rotates about the
//! body x axis through `hip_offset`. Hip and knee are pitch joints whose
//! positive direction swings the foot towards +x.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math_nav::{Mat3, Rotation, Vec3};

/// Default symmetric joint limit, rad.
pub const DEFAULT_JOINT_LIMIT: f64 = 2.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ImuLink {
    Thigh,
    #[default]
    Calf,
}

/// Geometry of one leg, including where its IMU sits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LegParams {
    /// Abduction joint origin in the body frame, m.
    pub hip_offset: Vec3,
    /// Lateral offset from the abduction axis to the hip pitch joint, m.
    pub abd_offset: f64,
    pub l_thigh: f64,
    pub l_calf: f64,
    /// +1 for left legs, -1 for right legs.
    pub side_sign: f64,
    #[serde(default)]
    pub imu_link: ImuLink,
    /// IMU position in the carrying link's frame, m.
    pub imu_offset: Vec3,
    /// Foot contact point in the IMU frame, m.
    pub lever_foot: Vec3,
    #[serde(default = "default_joint_limit")]
    pub joint_limit: f64,
}

fn default_joint_limit() -> f64 {
    DEFAULT_JOINT_LIMIT
}

/// Distance from the knee to the default IMU mount along the calf, m.
const DEFAULT_IMU_DOWN_CALF: f64 = 0.17;

impl LegParams {
    /// Placeholder Go2-class dimensions for leg `index` (0 = FL, 1 = FR,
    /// 2 = RL, 3 = RR), IMU on the calf near the foot.
    pub fn quadruped_default(index: usize) -> Self {
        let front = if index < 2 { 1.0 } else { -1.0 };
        let side = if index % 2 == 0 { 1.0 } else { -1.0 };
        let l_calf = 0.213;
        Self {
            hip_offset: Vec3::new(0.19 * front, 0.047 * side, 0.0),
            abd_offset: 0.08,
            l_thigh: 0.213,
            l_calf,
            side_sign: side,
            imu_link: ImuLink::Calf,
            imu_offset: Vec3::new(0.0, 0.0, -DEFAULT_IMU_DOWN_CALF),
            lever_foot: Vec3::new(0.0, 0.0, -(l_calf - DEFAULT_IMU_DOWN_CALF)),
            joint_limit: DEFAULT_JOINT_LIMIT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("leg parameters: {m}")));
        if !(self.l_thigh > 0.0 && self.l_calf > 0.0) {
            return bad("link lengths must be positive");
        }
        if self.abd_offset < 0.0 {
            return bad("abd_offset must be non-negative");
        }
        if self.side_sign != 1.0 && self.side_sign != -1.0 {
            return bad("side_sign must be +1 or -1");
        }
        if self.imu_offset.norm() >= 0.5 || self.lever_foot.norm() >= 0.5 {
            return bad("imu_offset and lever_foot must be shorter than 0.5 m");
        }
        if !(self.joint_limit > 0.0) {
            return bad("joint_limit must be positive");
        }
        let all_finite = self
            .hip_offset
            .iter()
            .chain(self.imu_offset.iter())
            .chain(self.lever_foot.iter())
            .all(|x| x.is_finite());
        if !all_finite {
            return bad("non-finite value");
        }
        Ok(())
    }

    /// Upper bound on the Frobenius norm of the foot Jacobian.
    pub fn reach(&self) -> f64 {
        let leg = self.l_thigh + self.l_calf;
        let abd = self.abd_offset + leg;
        (abd * abd + leg * leg + self.l_calf * self.l_calf).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointAngles {
    pub abd: f64,
    pub hip: f64,
    pub knee: f64,
}

impl JointAngles {
    pub fn new(abd: f64, hip: f64, knee: f64) -> Self {
        Self { abd, hip, knee }
    }

    pub fn to_vector(self) -> Vec3 {
        Vec3::new(self.abd, self.hip, self.knee)
    }

    pub fn from_vector(v: &Vec3) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn check_limits(&self, limit: f64) -> Result<()> {
        for (name, value) in [("abd", self.abd), ("hip", self.hip), ("knee", self.knee)] {
            if !value.is_finite() || value.abs() > limit {
                return Err(Error::JointLimit { name, value, limit });
            }
        }
        Ok(())
    }
}

/// Rotation for a pitch joint whose positive angle moves `-z` towards `+x`.
fn pitch(angle: f64) -> Rotation {
    Rotation::from_axis_angle(&Vec3::y_axis(), -angle)
}

/// Joint origins and link orientations of one leg configuration.
struct Chain {
    r_abd: Rotation,
    r_thigh: Rotation,
    r_calf: Rotation,
    thigh_origin: Vec3,
    knee: Vec3,
    foot: Vec3,
}

fn chain(q: &JointAngles, params: &LegParams) -> Chain {
    let r_abd = Rotation::from_axis_angle(&Vec3::x_axis(), q.abd);
    let r_thigh = r_abd * pitch(q.hip);
    let r_calf = r_thigh * pitch(q.knee);
    let thigh_origin =
        params.hip_offset + r_abd * Vec3::new(0.0, params.side_sign * params.abd_offset, 0.0);
    let knee = thigh_origin + r_thigh * Vec3::new(0.0, 0.0, -params.l_thigh);
    let foot = knee + r_calf * Vec3::new(0.0, 0.0, -params.l_calf);
    Chain {
        r_abd,
        r_thigh,
        r_calf,
        thigh_origin,
        knee,
        foot,
    }
}

/// Foot position in the body frame.
pub fn forward_kinematics(q: &JointAngles, params: &LegParams) -> Result<Vec3> {
    q.check_limits(params.joint_limit)?;
    Ok(chain(q, params).foot)
}

/// `d foot / d q` in the body frame, columns ordered (abd, hip, knee).
pub fn fk_jacobian(q: &JointAngles, params: &LegParams) -> Result<Mat3> {
    q.check_limits(params.joint_limit)?;
    let c = chain(q, params);
    let abd_axis = Vec3::x();
    // Both pitch joints rotate about the abducted -y axis.
    let pitch_axis = c.r_abd * -Vec3::y();
    let col_abd = abd_axis.cross(&(c.foot - params.hip_offset));
    let col_hip = pitch_axis.cross(&(c.foot - c.thigh_origin));
    let col_knee = pitch_axis.cross(&(c.foot - c.knee));
    Ok(Mat3::from_columns(&[col_abd, col_hip, col_knee]))
}

/// Leg-IMU position in the body frame.
pub fn leg_imu_position(q: &JointAngles, params: &LegParams) -> Result<Vec3> {
    q.check_limits(params.joint_limit)?;
    Ok(leg_imu_pose_unchecked(q, params).1)
}

/// Leg-IMU orientation (IMU frame to body frame); the IMU axes are aligned
/// with its link.
pub fn leg_imu_rotation(q: &JointAngles, params: &LegParams) -> Result<Rotation> {
    q.check_limits(params.joint_limit)?;
    Ok(leg_imu_pose_unchecked(q, params).0)
}

pub(crate) fn leg_imu_pose_unchecked(q: &JointAngles, params: &LegParams) -> (Rotation, Vec3) {
    let c = chain(q, params);
    match params.imu_link {
        ImuLink::Thigh => (c.r_thigh, c.thigh_origin + c.r_thigh * params.imu_offset),
        ImuLink::Calf => (c.r_calf, c.knee + c.r_calf * params.imu_offset),
    }
}

/// Joint angles placing the foot at `p` (body frame), knee-backward branch.
pub fn inverse_kinematics(p: &Vec3, params: &LegParams) -> Result<JointAngles> {
    let rel = p - params.hip_offset;
    let d = params.abd_offset;
    let (l1, l2) = (params.l_thigh, params.l_calf);

    let rho2 = rel.y * rel.y + rel.z * rel.z;
    if rho2 < d * d {
        return Err(Error::Unreachable {
            reason: "inside the abduction offset cylinder",
            distance: d - rho2.sqrt(),
        });
    }
    // Foot height in the abducted leg plane (below the hip).
    let z_leg = -(rho2 - d * d).sqrt();
    let abd = rel.z.atan2(rel.y) - z_leg.atan2(params.side_sign * d);
    let abd = crate::math_nav::wrap_angle(abd);

    let x_leg = rel.x;
    let r = x_leg.hypot(z_leg);
    let outer = l1 + l2;
    let inner = (l1 - l2).abs();
    if r > outer {
        return Err(Error::Unreachable {
            reason: "beyond full leg extension",
            distance: r - outer,
        });
    }
    if r <= inner {
        return Err(Error::Unreachable {
            reason: "closer than the folded leg allows",
            distance: inner - r,
        });
    }
    // Half-angle law of cosines; exact at full extension.
    let num = (outer - r) * (outer + r);
    let den = (r - (l1 - l2)) * (r + (l1 - l2));
    let knee = 2.0 * (num / den).sqrt().atan();
    let hip = x_leg.atan2(-z_leg) - (l2 * knee.sin()).atan2(l1 + l2 * knee.cos());

    let q = JointAngles::new(abd, hip, knee);
    q.check_limits(params.joint_limit)?;
    Ok(q)
}
