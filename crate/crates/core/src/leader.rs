//! Simulated leader haptic device: cylindrical workspace, translational force
//! saturation, binary gripper and a first-order servo toward the operator's
//! commanded hand position.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LeaderError {
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("invalid device limits: {0}")]
    InvalidLimits(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceLimits {
    /// Maximum translational force rendered to the hand, N.
    pub max_force: f64,
    /// Maximum gripper force, N. Informational; the gripper is binary here.
    pub max_grasp_force: f64,
    pub workspace_diameter: f64,
    pub workspace_height: f64,
}

impl Default for DeviceLimits {
    fn default() -> Self {
        Self {
            max_force: 20.0,
            max_grasp_force: 8.0,
            workspace_diameter: 0.19,
            workspace_height: 0.13,
        }
    }
}

impl DeviceLimits {
    pub fn validate(&self) -> Result<(), LeaderError> {
        let all = [
            self.max_force,
            self.max_grasp_force,
            self.workspace_diameter,
            self.workspace_height,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(LeaderError::InvalidLimits(
                "all device limits must be positive".into(),
            ))
        }
    }

    pub fn contains(&self, pos: &Vector3<f64>) -> bool {
        let r = (pos.x * pos.x + pos.y * pos.y).sqrt();
        r <= self.workspace_diameter / 2.0 + 1e-12 && pos.z.abs() <= self.workspace_height / 2.0 + 1e-12
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceParams {
    pub limits: DeviceLimits,
    /// Servo time constant, s. Values near zero make the device a pass-through.
    pub time_constant: f64,
}

impl Default for DeviceParams {
    fn default() -> Self {
        Self {
            limits: DeviceLimits::default(),
            time_constant: 0.02,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeaderState {
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub grip_closed: bool,
    pub feedback_force: Vector3<f64>,
}

impl Default for LeaderState {
    fn default() -> Self {
        Self {
            pos: Vector3::zeros(),
            vel: Vector3::zeros(),
            grip_closed: false,
            feedback_force: Vector3::zeros(),
        }
    }
}

/// Projects a point onto the closed workspace cylinder (axis `+z`, centered
/// at the device origin).
pub fn clamp_to_workspace(pos: &Vector3<f64>, limits: &DeviceLimits) -> Vector3<f64> {
    let radius = limits.workspace_diameter / 2.0;
    let half_h = limits.workspace_height / 2.0;
    let mut out = *pos;
    let r = (pos.x * pos.x + pos.y * pos.y).sqrt();
    if r > radius {
        out.x *= radius / r;
        out.y *= radius / r;
    }
    out.z = out.z.clamp(-half_h, half_h);
    out
}

/// Scales `force` down to the translational limit, preserving its direction.
/// Non-finite input renders no force.
pub fn saturate_force(force: &Vector3<f64>, limits: &DeviceLimits) -> Vector3<f64> {
    let n = force.norm();
    if !n.is_finite() {
        Vector3::zeros()
    } else if n <= limits.max_force {
        *force
    } else {
        force * (limits.max_force / n)
    }
}

pub fn device_step(
    state: &LeaderState,
    operator_target: &Vector3<f64>,
    grip_cmd: bool,
    feedback: &Vector3<f64>,
    dt: f64,
    params: &DeviceParams,
) -> Result<LeaderState, LeaderError> {
    if !(dt > 0.0) {
        return Err(LeaderError::NonPositiveStep(dt));
    }
    let target = clamp_to_workspace(operator_target, &params.limits);
    let alpha = if params.time_constant > 0.0 {
        1.0 - (-dt / params.time_constant).exp()
    } else {
        1.0
    };
    let pos = clamp_to_workspace(&(state.pos + (target - state.pos) * alpha), &params.limits);
    Ok(LeaderState {
        pos,
        vel: (pos - state.pos) / dt,
        grip_closed: grip_cmd,
        feedback_force: saturate_force(feedback, &params.limits),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    #[test]
    fn workspace_clamp_examples() {
        let l = DeviceLimits::default();
        assert_eq!(clamp_to_workspace(&v(0.0, 0.0, 0.0), &l), v(0.0, 0.0, 0.0));
        assert!((clamp_to_workspace(&v(0.2, 0.0, 0.0), &l) - v(0.095, 0.0, 0.0)).norm() < 1e-15);
        assert!((clamp_to_workspace(&v(0.0, 0.0, 0.10), &l) - v(0.0, 0.0, 0.065)).norm() < 1e-15);
    }

    #[test]
    fn force_saturation_examples() {
        let l = DeviceLimits::default();
        assert_eq!(saturate_force(&v(30.0, 0.0, 0.0), &l), v(20.0, 0.0, 0.0));
        assert_eq!(saturate_force(&v(0.0, 0.0, 5.0), &l), v(0.0, 0.0, 5.0));
        assert_eq!(saturate_force(&v(12.0, 16.0, 0.0), &l), v(12.0, 16.0, 0.0));
        assert_eq!(saturate_force(&v(f64::NAN, 0.0, 0.0), &l), Vector3::zeros());
    }

    #[test]
    fn step_examples() {
        let p = DeviceParams::default();
        let s0 = LeaderState::default();
        let s1 = device_step(&s0, &v(0.01, 0.0, 0.0), false, &Vector3::zeros(), 0.002, &p).unwrap();
        let expected = 0.01 * (1.0 - (-0.1f64).exp());
        assert!((s1.pos.x - expected).abs() < 1e-15);
        assert!((s1.pos.x - 9.516e-4).abs() < 1e-7);
        assert!((s1.vel.x - expected / 0.002).abs() < 1e-12);

        // fixed point: only the feedback changes
        let s2 = device_step(&s1, &s1.pos, false, &v(1.0, 2.0, 3.0), 0.002, &p).unwrap();
        assert_eq!(s2.pos, s1.pos);
        assert_eq!(s2.vel, Vector3::zeros());
        assert_eq!(s2.feedback_force, v(1.0, 2.0, 3.0));

        let pass = DeviceParams {
            time_constant: 1e-9,
            ..p
        };
        let s3 = device_step(&s0, &v(0.3, 0.0, 0.0), true, &Vector3::zeros(), 0.002, &pass).unwrap();
        assert!((s3.pos - v(0.095, 0.0, 0.0)).norm() < 1e-15);
        assert!(s3.grip_closed);
    }

    #[test]
    fn rejects_bad_step() {
        let s = LeaderState::default();
        let p = DeviceParams::default();
        for dt in [0.0, -1.0, f64::NAN] {
            assert!(device_step(&s, &Vector3::zeros(), false, &Vector3::zeros(), dt, &p).is_err());
        }
    }

    proptest! {
        #[test]
        fn stays_in_workspace(targets in prop::collection::vec(
            (-0.5f64..0.5, -0.5f64..0.5, -0.5f64..0.5, -100.0f64..100.0), 1..60)
        ) {
            let p = DeviceParams::default();
            let mut s = LeaderState::default();
            for (x, y, z, f) in targets {
                s = device_step(&s, &v(x, y, z), false, &v(f, -f, f), 0.002, &p).unwrap();
                prop_assert!(p.limits.contains(&s.pos));
                prop_assert!(s.feedback_force.norm() <= 20.0 + 1e-12);
            }
        }

        #[test]
        fn converges_monotonically(x in -0.3f64..0.3, y in -0.3f64..0.3, z in -0.3f64..0.3) {
            let p = DeviceParams::default();
            let target = v(x, y, z);
            let goal = clamp_to_workspace(&target, &p.limits);
            let mut s = LeaderState::default();
            let mut prev = (s.pos - goal).abs();
            for _ in 0..2000 {
                s = device_step(&s, &target, false, &Vector3::zeros(), 0.002, &p).unwrap();
                let err = (s.pos - goal).abs();
                for k in 0..3 {
                    prop_assert!(err[k] <= prev[k] + 1e-15);
                }
                prev = err;
            }
            prop_assert!((s.pos - goal).norm() < 1e-9);
        }
    }
}
