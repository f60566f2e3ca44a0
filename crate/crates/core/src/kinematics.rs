//! Kinematic chain of the simulated six-joint upper-limb exoskeleton.
//!
//! Frame convention: right-handed world frame with `+x` forward, `+y` to the
//! subject's left and `+z` up. The zero configuration is the arm hanging
//! straight down from the shoulder. Joint order:
//!
//! | index | joint                               | axis at zero pose |
//! |-------|-------------------------------------|-------------------|
//! | 0     | shoulder abduction/adduction        | `-x`              |
//! | 1     | shoulder flexion/extension          | `-y`              |
//! | 2     | humeral internal/external rotation  | `+z` (upper arm)  |
//! | 3     | elbow flexion                       | `-y`              |
//! | 4     | forearm pronation/supination        | forearm axis      |
//! | 5     | wrist flexion                       | at the wrist      |
//!
//! The two graspable points are the elbow and wrist joint centers, so the
//! last two joints never move either of them.

use nalgebra::{Matrix3, Matrix3x6, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Joint angles in radians, ordered as in the module table.
pub type JointVector = Vector6<f64>;

pub const NUM_JOINTS: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("joint {joint} = {value} rad outside limits [{min}, {max}]")]
    JointLimit {
        joint: usize,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("joint {joint} is not finite")]
    NonFinite { joint: usize },
    #[error("invalid kinematic parameters: {0}")]
    InvalidParams(String),
}

/// Lower/upper bounds per joint, radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub min: [f64; NUM_JOINTS],
    pub max: [f64; NUM_JOINTS],
}

impl Default for JointLimits {
    fn default() -> Self {
        Self {
            min: [-0.5, -0.5, -1.2, 0.0, -1.5, -1.0],
            max: [2.0, 2.8, 1.2, 2.4, 1.5, 1.0],
        }
    }
}

impl JointLimits {
    pub fn validate(&self) -> Result<(), KinematicsError> {
        for i in 0..NUM_JOINTS {
            let (lo, hi) = (self.min[i], self.max[i]);
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(KinematicsError::InvalidParams(format!(
                    "joint {i} limits [{lo}, {hi}] must be finite with min < max"
                )));
            }
        }
        Ok(())
    }

    pub fn check(&self, q: &JointVector) -> Result<(), KinematicsError> {
        for i in 0..NUM_JOINTS {
            let v = q[i];
            if !v.is_finite() {
                return Err(KinematicsError::NonFinite { joint: i });
            }
            if v < self.min[i] || v > self.max[i] {
                return Err(KinematicsError::JointLimit {
                    joint: i,
                    value: v,
                    min: self.min[i],
                    max: self.max[i],
                });
            }
        }
        Ok(())
    }

    pub fn contains(&self, q: &JointVector) -> bool {
        self.check(q).is_ok()
    }

    /// Clamps `q` into the limits and reports which axes saturated.
    pub fn clamp(&self, q: &JointVector) -> (JointVector, [bool; NUM_JOINTS]) {
        let mut out = *q;
        let mut hit = [false; NUM_JOINTS];
        for i in 0..NUM_JOINTS {
            if out[i] < self.min[i] {
                out[i] = self.min[i];
                hit[i] = true;
            } else if out[i] > self.max[i] {
                out[i] = self.max[i];
                hit[i] = true;
            }
        }
        (out, hit)
    }

    pub fn midpoint(&self) -> JointVector {
        JointVector::from_fn(|i, _| 0.5 * (self.min[i] + self.max[i]))
    }
}

/// Segment geometry and mass distribution of the simulated arm.
///
/// Defaults are anthropometric placeholders, not measured exoskeleton values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KinematicParams {
    pub shoulder_origin: [f64; 3],
    pub upper_arm_length: f64,
    pub forearm_length: f64,
    pub upper_arm_mass: f64,
    pub forearm_mass: f64,
    pub com_ratio: f64,
    pub gravity: f64,
    pub limits: JointLimits,
}

impl Default for KinematicParams {
    fn default() -> Self {
        Self {
            shoulder_origin: [0.34, 0.0, 1.0],
            upper_arm_length: 0.30,
            forearm_length: 0.25,
            upper_arm_mass: 2.0,
            forearm_mass: 1.5,
            com_ratio: 0.45,
            gravity: 9.81,
            limits: JointLimits::default(),
        }
    }
}

impl KinematicParams {
    pub fn validate(&self) -> Result<(), KinematicsError> {
        let bad = |m: &str| Err(KinematicsError::InvalidParams(m.to_string()));
        if !(self.upper_arm_length > 0.0 && self.forearm_length > 0.0) {
            return bad("segment lengths must be > 0");
        }
        if !(self.upper_arm_mass >= 0.0 && self.forearm_mass >= 0.0) {
            return bad("segment masses must be >= 0");
        }
        if !(self.com_ratio > 0.0 && self.com_ratio < 1.0) {
            return bad("com_ratio must lie in (0, 1)");
        }
        if !self.gravity.is_finite() || self.shoulder_origin.iter().any(|v| !v.is_finite()) {
            return bad("gravity and shoulder origin must be finite");
        }
        self.limits.validate()
    }

    pub fn origin(&self) -> Vector3<f64> {
        Vector3::from(self.shoulder_origin)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GraspPoint {
    Elbow,
    Wrist,
}

impl GraspPoint {
    pub const ALL: [GraspPoint; 2] = [GraspPoint::Elbow, GraspPoint::Wrist];

    pub fn other(self) -> Self {
        match self {
            GraspPoint::Elbow => GraspPoint::Wrist,
            GraspPoint::Wrist => GraspPoint::Elbow,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GraspPoint::Elbow => "elbow",
            GraspPoint::Wrist => "wrist",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraspablePoints {
    pub elbow: Vector3<f64>,
    pub wrist: Vector3<f64>,
}

impl GraspablePoints {
    pub fn get(&self, point: GraspPoint) -> Vector3<f64> {
        match point {
            GraspPoint::Elbow => self.elbow,
            GraspPoint::Wrist => self.wrist,
        }
    }
}

fn rot_x(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

fn rot_y(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

fn rot_z(a: f64) -> Matrix3<f64> {
    let (s, c) = a.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Intermediate quantities shared by forward kinematics and the Jacobians.
struct Chain {
    elbow: Vector3<f64>,
    wrist: Vector3<f64>,
    /// World-frame joint axes for the four joints that move a graspable point.
    axes: [Vector3<f64>; 4],
}

fn chain(q: &JointVector, p: &KinematicParams) -> Chain {
    let down = Vector3::new(0.0, 0.0, -1.0);
    let r1 = rot_x(-q[0]);
    let r12 = r1 * rot_y(-q[1]);
    let r_shoulder = r12 * rot_z(q[2]);
    let r_elbow = r_shoulder * rot_y(-q[3]);
    let elbow = p.origin() + r_shoulder * down * p.upper_arm_length;
    let wrist = elbow + r_elbow * down * p.forearm_length;
    Chain {
        elbow,
        wrist,
        axes: [
            -Vector3::x(),
            r1 * -Vector3::y(),
            r12 * Vector3::z(),
            r_shoulder * -Vector3::y(),
        ],
    }
}

/// Elbow and wrist joint-center positions for an in-limit configuration.
pub fn forward_kinematics(
    q: &JointVector,
    p: &KinematicParams,
) -> Result<GraspablePoints, KinematicsError> {
    p.limits.check(q)?;
    Ok(forward_kinematics_unchecked(q, p))
}

/// Same as [`forward_kinematics`] without the joint-limit check.
pub fn forward_kinematics_unchecked(q: &JointVector, p: &KinematicParams) -> GraspablePoints {
    let c = chain(q, p);
    GraspablePoints {
        elbow: c.elbow,
        wrist: c.wrist,
    }
}

fn jacobian_from_chain(c: &Chain, point: GraspPoint, p: &KinematicParams) -> Matrix3x6<f64> {
    let mut j = Matrix3x6::zeros();
    let (target, moving) = match point {
        GraspPoint::Elbow => (c.elbow, 3),
        GraspPoint::Wrist => (c.wrist, 4),
    };
    let origin = p.origin();
    for (i, axis) in c.axes.iter().enumerate().take(moving) {
        let pivot = if i < 3 { origin } else { c.elbow };
        j.set_column(i, &axis.cross(&(target - pivot)));
    }
    j
}

/// Linear-velocity Jacobian of a graspable point, one column per joint.
pub fn point_jacobian(
    q: &JointVector,
    point: GraspPoint,
    p: &KinematicParams,
) -> Result<Matrix3x6<f64>, KinematicsError> {
    p.limits.check(q)?;
    Ok(point_jacobian_unchecked(q, point, p))
}

pub fn point_jacobian_unchecked(
    q: &JointVector,
    point: GraspPoint,
    p: &KinematicParams,
) -> Matrix3x6<f64> {
    jacobian_from_chain(&chain(q, p), point, p)
}

/// Gravitational potential energy of the two point-mass segments, J.
pub fn potential_energy(q: &JointVector, p: &KinematicParams) -> f64 {
    let pts = forward_kinematics_unchecked(q, p);
    let c = p.com_ratio;
    let origin = p.origin();
    let upper_com = origin + (pts.elbow - origin) * c;
    let fore_com = pts.elbow + (pts.wrist - pts.elbow) * c;
    p.gravity * (p.upper_arm_mass * upper_com.z + p.forearm_mass * fore_com.z)
}

/// Generalized gravity force `-dU/dq` acting on each joint, N·m.
pub fn gravity_torques(q: &JointVector, p: &KinematicParams) -> Result<JointVector, KinematicsError> {
    p.limits.check(q)?;
    Ok(gravity_torques_unchecked(q, p))
}

pub fn gravity_torques_unchecked(q: &JointVector, p: &KinematicParams) -> JointVector {
    let c = chain(q, p);
    let je = jacobian_from_chain(&c, GraspPoint::Elbow, p);
    let jw = jacobian_from_chain(&c, GraspPoint::Wrist, p);
    let r = p.com_ratio;
    // dz/dq of each center of mass is a blend of the point Jacobian z-rows.
    let dz_upper = je.row(2) * r;
    let dz_fore = je.row(2) * (1.0 - r) + jw.row(2) * r;
    let grad = (dz_upper * p.upper_arm_mass + dz_fore * p.forearm_mass) * p.gravity;
    -grad.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn at_origin() -> KinematicParams {
        KinematicParams {
            shoulder_origin: [0.0; 3],
            ..Default::default()
        }
    }

    #[test]
    fn zero_pose_hangs_down() {
        let pts = forward_kinematics(&JointVector::zeros(), &at_origin()).unwrap();
        assert!((pts.elbow - Vector3::new(0.0, 0.0, -0.30)).norm() < 1e-15);
        assert!((pts.wrist - Vector3::new(0.0, 0.0, -0.55)).norm() < 1e-15);
    }

    #[test]
    fn elbow_flexed_forearm_points_forward() {
        let mut q = JointVector::zeros();
        q[3] = FRAC_PI_2;
        let pts = forward_kinematics(&q, &at_origin()).unwrap();
        // independent composition: R = Ry(-pi/2) maps -z to +x
        let ry = Matrix3::new(0.0, 0.0, -1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0);
        let expected = Vector3::new(0.0, 0.0, -0.30) + ry * Vector3::new(0.0, 0.0, -0.25);
        assert!((pts.wrist - expected).norm() < 1e-12);
        assert!(close(pts.wrist.x, 0.25, 1e-12));
    }

    #[test]
    fn limit_violation_is_domain_error() {
        let mut q = JointVector::zeros();
        q[3] = -0.1;
        assert!(matches!(
            forward_kinematics(&q, &at_origin()),
            Err(KinematicsError::JointLimit { joint: 3, .. })
        ));
        q[3] = f64::NAN;
        assert!(matches!(
            point_jacobian(&q, GraspPoint::Wrist, &at_origin()),
            Err(KinematicsError::NonFinite { joint: 3 })
        ));
    }

    #[test]
    fn structural_zero_columns() {
        let p = KinematicParams::default();
        let q = JointVector::new(0.3, 1.1, -0.4, 1.2, 0.7, -0.3);
        let je = point_jacobian(&q, GraspPoint::Elbow, &p).unwrap();
        let jw = point_jacobian(&q, GraspPoint::Wrist, &p).unwrap();
        for c in 3..6 {
            assert_eq!(je.column(c).norm(), 0.0);
        }
        for c in 4..6 {
            assert_eq!(jw.column(c).norm(), 0.0);
        }
    }

    #[test]
    fn gravity_vanishes_when_hanging() {
        let tau = gravity_torques(&JointVector::zeros(), &KinematicParams::default()).unwrap();
        assert!(tau.iter().all(|t| t.abs() <= 1e-12));
    }

    #[test]
    fn gravity_scales_with_mass() {
        let p = KinematicParams::default();
        let heavy = KinematicParams {
            upper_arm_mass: 2.0 * p.upper_arm_mass,
            forearm_mass: 2.0 * p.forearm_mass,
            ..p
        };
        let q = JointVector::new(0.4, 1.3, 0.2, 0.9, 0.0, 0.0);
        let a = gravity_torques(&q, &p).unwrap();
        let b = gravity_torques(&q, &heavy).unwrap();
        for i in 0..6 {
            assert!(close(b[i], 2.0 * a[i], 1e-12));
        }
    }

    #[test]
    fn horizontal_arm_gravity_pulls_down() {
        let p = KinematicParams::default();
        let mut q = JointVector::zeros();
        q[1] = FRAC_PI_2;
        let tau = gravity_torques(&q, &p).unwrap();
        // flexion axis is -y; gravity drives the arm back down (negative flexion)
        let expected = -p.gravity
            * (p.upper_arm_mass * p.com_ratio * 0.30
                + p.forearm_mass * (0.30 + p.com_ratio * 0.25));
        assert!(close(tau[1], expected, 1e-9));
    }

    #[test]
    fn params_validation() {
        assert!(KinematicParams::default().validate().is_ok());
        let bad = KinematicParams {
            com_ratio: 1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let mut lim = JointLimits::default();
        lim.min[2] = lim.max[2];
        assert!(lim.validate().is_err());
    }

    #[test]
    fn clamp_reports_saturated_axes() {
        let lim = JointLimits::default();
        let q = JointVector::new(3.0, 0.0, -2.0, 0.5, 0.0, 0.0);
        let (c, hit) = lim.clamp(&q);
        assert_eq!(c[0], 2.0);
        assert_eq!(c[2], -1.2);
        assert_eq!(hit, [true, false, true, false, false, false]);
    }
}
