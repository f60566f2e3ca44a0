//! Follower plant: the trainee's arm inside the exoskeleton, modeled as a
//! first-order joint-space admittance driven by coupling torques, voluntary
//! torques, the transparent baseline controller and gravity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kinematics::{gravity_torques_unchecked, JointVector, KinematicParams, NUM_JOINTS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("non-finite {source_name} torque on joint {joint}")]
    NonFiniteTorque {
        source_name: &'static str,
        joint: usize,
    },
    #[error("invalid plant parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantParams {
    /// Passive joint damping of arm plus exoskeleton, N·m·s/rad.
    pub joint_damping: [f64; NUM_JOINTS],
    /// Fraction of the arm's gravity load carried by the exoskeleton.
    pub weight_comp: f64,
    /// Residual viscous friction left by the transparent controller, N·m·s/rad.
    pub baseline_viscous: [f64; NUM_JOINTS],
    pub dt: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            joint_damping: [4.0; NUM_JOINTS],
            weight_comp: 0.65,
            baseline_viscous: [0.2; NUM_JOINTS],
            dt: 0.002,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        if self.joint_damping.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
            return Err(PlantError::InvalidParams("joint damping must be > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.weight_comp) {
            return Err(PlantError::InvalidParams("weight_comp must lie in [0, 1]".into()));
        }
        if self.baseline_viscous.iter().any(|b| !(*b >= 0.0)) {
            return Err(PlantError::InvalidParams("baseline viscous must be >= 0".into()));
        }
        if !(self.dt > 0.0) {
            return Err(PlantError::InvalidParams("dt must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowerState {
    pub q: JointVector,
    pub qdot: JointVector,
    /// Simulation time, microseconds.
    pub t_us: u64,
}

impl FollowerState {
    pub fn at_rest(q: JointVector) -> Self {
        Self {
            q,
            qdot: JointVector::zeros(),
            t_us: 0,
        }
    }
}

/// Zero-torque baseline controller: cancels `weight_comp` of the gravity
/// load and leaves a small viscous residual.
pub fn baseline_torques(
    q: &JointVector,
    qdot: &JointVector,
    params: &PlantParams,
    kin: &KinematicParams,
) -> JointVector {
    let viscous = JointVector::from(params.baseline_viscous);
    -gravity_torques_unchecked(q, kin) * params.weight_comp - viscous.component_mul(qdot)
}

fn check_finite(tau: &JointVector, name: &'static str) -> Result<(), PlantError> {
    match tau.iter().position(|t| !t.is_finite()) {
        Some(joint) => Err(PlantError::NonFiniteTorque {
            source_name: name,
            joint,
        }),
        None => Ok(()),
    }
}

/// One explicit admittance step. Joints that would leave their limits are
/// clamped and their velocity zeroed.
pub fn plant_step(
    state: &FollowerState,
    tau_coupling: &JointVector,
    tau_voluntary: &JointVector,
    params: &PlantParams,
    kin: &KinematicParams,
) -> Result<FollowerState, PlantError> {
    check_finite(tau_coupling, "coupling")?;
    check_finite(tau_voluntary, "voluntary")?;
    let tau_g = gravity_torques_unchecked(&state.q, kin);
    let net = tau_coupling
        + tau_voluntary
        + baseline_torques(&state.q, &state.qdot, params, kin)
        + tau_g;
    let damping = JointVector::from(params.joint_damping);
    let mut qdot = net.component_div(&damping);
    let (q, saturated) = kin.limits.clamp(&(state.q + qdot * params.dt));
    for (i, hit) in saturated.iter().enumerate() {
        if *hit {
            qdot[i] = 0.0;
        }
    }
    Ok(FollowerState {
        q,
        qdot,
        t_us: state.t_us + (params.dt * 1e6).round() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn horizontal() -> JointVector {
        JointVector::new(0.0, std::f64::consts::FRAC_PI_2, 0.0, 0.0, 0.0, 0.0)
    }

    #[test]
    fn baseline_examples() {
        let kin = KinematicParams::default();
        let p = PlantParams::default();
        let z = JointVector::zeros();
        assert!(baseline_torques(&z, &z, &p, &kin).amax() <= 1e-12);
        let q = horizontal();
        let g = gravity_torques_unchecked(&q, &kin);
        let b = baseline_torques(&q, &z, &p, &kin);
        assert!((b + g * 0.65).amax() <= 1e-12);
    }

    #[test]
    fn full_compensation_holds_any_pose() {
        let kin = KinematicParams::default();
        let p = PlantParams {
            weight_comp: 1.0,
            ..Default::default()
        };
        let q = JointVector::new(0.4, 1.3, -0.3, 1.7, 0.2, 0.1);
        let mut s = FollowerState::at_rest(q);
        for _ in 0..100 {
            s = plant_step(&s, &JointVector::zeros(), &JointVector::zeros(), &p, &kin).unwrap();
        }
        assert!((s.q - q).norm() < 1e-12);
        assert_eq!(s.t_us, 200_000);
    }

    #[test]
    fn admittance_arithmetic() {
        let kin = KinematicParams::default();
        let p = PlantParams {
            weight_comp: 1.0,
            ..Default::default()
        };
        let mut q = JointVector::zeros();
        q[3] = 0.5;
        let mut tau = JointVector::zeros();
        tau[4] = 1.0;
        let s = plant_step(&FollowerState::at_rest(q), &tau, &JointVector::zeros(), &p, &kin).unwrap();
        assert!((s.q[4] - 5.0e-4).abs() < 1e-15);
        assert!((s.qdot[4] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn partial_compensation_sags() {
        let kin = KinematicParams::default();
        let p = PlantParams::default();
        let s = plant_step(
            &FollowerState::at_rest(horizontal()),
            &JointVector::zeros(),
            &JointVector::zeros(),
            &p,
            &kin,
        )
        .unwrap();
        assert!(s.q[1] < horizontal()[1]);
    }

    #[test]
    fn limit_clamps_and_zeroes_velocity() {
        let kin = KinematicParams::default();
        let p = PlantParams {
            weight_comp: 1.0,
            ..Default::default()
        };
        let mut q = JointVector::zeros();
        q[0] = kin.limits.max[0];
        let mut tau = JointVector::zeros();
        tau[0] = 5.0;
        let s = plant_step(&FollowerState::at_rest(q), &tau, &JointVector::zeros(), &p, &kin).unwrap();
        assert_eq!(s.q[0], kin.limits.max[0]);
        assert_eq!(s.qdot[0], 0.0);
    }

    #[test]
    fn non_finite_torque_is_fault() {
        let kin = KinematicParams::default();
        let mut tau = JointVector::zeros();
        tau[2] = f64::INFINITY;
        let err = plant_step(
            &FollowerState::at_rest(JointVector::zeros()),
            &JointVector::zeros(),
            &tau,
            &PlantParams::default(),
            &kin,
        )
        .unwrap_err();
        assert_eq!(
            err,
            PlantError::NonFiniteTorque {
                source_name: "voluntary",
                joint: 2
            }
        );
    }

    proptest! {
        #[test]
        fn never_leaves_limits(torques in prop::collection::vec(prop::array::uniform6(-200.0f64..200.0), 1..80)) {
            let kin = KinematicParams::default();
            let p = PlantParams::default();
            let mut s = FollowerState::at_rest(kin.limits.midpoint());
            for t in torques {
                s = plant_step(&s, &JointVector::from(t), &JointVector::zeros(), &p, &kin).unwrap();
                prop_assert!(kin.limits.contains(&s.q));
            }
        }
    }
}
