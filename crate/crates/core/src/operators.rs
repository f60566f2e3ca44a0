//! Scripted stand-ins for the two humans: a trainer who drives the leader
//! device to grab and place the graspable points, and a trainee who either
//! follows passively (haptic condition) or imitates the target in joint space
//! (visual condition).

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::coupling::{map_follower_to_leader, map_leader_to_follower, FrameMap, Grab};
use crate::kinematics::{
    gravity_torques_unchecked, GraspPoint, GraspablePoints, JointVector, KinematicParams,
};
use crate::task::{secs, to_us, PoseId, PoseTarget};

/// Minimum-jerk interpolation from `x0` to `xf` over `duration`; `t` is
/// clamped to `[0, duration]`.
pub fn min_jerk(x0: &Vector3<f64>, xf: &Vector3<f64>, duration: f64, t: f64) -> Vector3<f64> {
    let s = if duration > 0.0 {
        (t / duration).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let shape = s * s * s * (10.0 - 15.0 * s + 6.0 * s * s);
    x0 + (xf - x0) * shape
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerParams {
    /// Delay between a new target appearing and the first movement, s.
    pub reaction_s: f64,
    pub approach_s: f64,
    pub transport_s: f64,
    /// Mapped distance at which the gripper is closed, m. Kept below the
    /// controller's grab radius.
    pub grab_distance: f64,
    /// Give up on a grab that has not engaged after this long, s.
    pub grab_timeout_s: f64,
    /// A held point counts as placed when within this distance of its target, m.
    pub settle_tol: f64,
    pub settle_s: f64,
    /// The un-held point is considered fine within this distance, m.
    pub other_tol: f64,
    pub release_s: f64,
    /// Integral gain of the placement correction, 1/s.
    pub correction_gain: f64,
    /// Bound on the placement correction, m (follower frame).
    pub correction_max: f64,
    pub first_point: GraspPoint,
}

impl Default for TrainerParams {
    fn default() -> Self {
        Self {
            reaction_s: 0.5,
            approach_s: 1.5,
            transport_s: 2.5,
            grab_distance: 0.05,
            grab_timeout_s: 0.5,
            settle_tol: 0.05,
            settle_s: 0.5,
            other_tol: 0.06,
            release_s: 0.2,
            correction_gain: 1.0,
            correction_max: 0.10,
            first_point: GraspPoint::Elbow,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainerPhase {
    Idle,
    Approach(GraspPoint),
    Grab(GraspPoint),
    Transport(GraspPoint),
    Hold(GraspPoint),
    Release,
    SwitchPoint,
}

/// What the trainer sees in the virtual scene.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldView {
    pub points: GraspablePoints,
    pub grab: Grab,
    /// Pose currently requested, if any.
    pub target: Option<PoseTarget>,
    /// The requested pose has just been confirmed.
    pub confirmed: bool,
    /// Current leader device position (leader frame).
    pub leader_pos: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainerPolicyState {
    pub phase: TrainerPhase,
    pub phase_since_us: u64,
    pub seg_start: Vector3<f64>,
    pub settle_since_us: Option<u64>,
    pub target_pose: Option<PoseId>,
    pub target_since_us: u64,
    pub correction: Vector3<f64>,
    pub last_t_us: u64,
}

impl Default for TrainerPolicyState {
    fn default() -> Self {
        Self {
            phase: TrainerPhase::Idle,
            phase_since_us: 0,
            seg_start: Vector3::zeros(),
            settle_since_us: None,
            target_pose: None,
            target_since_us: 0,
            correction: Vector3::zeros(),
            last_t_us: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorCommand {
    /// Desired hand position in the leader frame.
    pub target: Vector3<f64>,
    pub grip: bool,
}

fn point_error(view: &WorldView, target: &PoseTarget, p: GraspPoint) -> f64 {
    (view.points.get(p) - target.point(p)).norm()
}

/// Next point worth guiding: the preferred one if it is off target, else the
/// other, else none.
fn pick_point(view: &WorldView, target: &PoseTarget, params: &TrainerParams) -> Option<GraspPoint> {
    let first = params.first_point;
    [first, first.other()]
        .into_iter()
        .find(|p| point_error(view, target, *p) > params.settle_tol)
}

fn enter(state: &mut TrainerPolicyState, phase: TrainerPhase, t_us: u64, leader_pos: Vector3<f64>) {
    state.phase = phase;
    state.phase_since_us = t_us;
    state.seg_start = leader_pos;
    state.settle_since_us = None;
}

pub fn trainer_policy_step(
    state: &TrainerPolicyState,
    view: &WorldView,
    t_us: u64,
    params: &TrainerParams,
    map: &FrameMap,
) -> (TrainerPolicyState, OperatorCommand) {
    let mut s = *state;
    let dt = secs(t_us.saturating_sub(state.last_t_us));
    s.last_t_us = t_us;
    let hold_still = OperatorCommand {
        target: view.leader_pos,
        grip: false,
    };

    let target = match (view.target, view.confirmed) {
        (Some(t), false) => t,
        _ => {
            if s.phase != TrainerPhase::Idle {
                enter(&mut s, TrainerPhase::Idle, t_us, view.leader_pos);
            }
            s.target_pose = None;
            return (s, hold_still);
        }
    };
    if s.target_pose != Some(target.pose) {
        s.target_pose = Some(target.pose);
        s.target_since_us = t_us;
        s.correction = Vector3::zeros();
        enter(&mut s, TrainerPhase::Idle, t_us, view.leader_pos);
    }

    let elapsed = secs(t_us.saturating_sub(s.phase_since_us));
    let mapped = map_leader_to_follower(&view.leader_pos, map);
    match s.phase {
        TrainerPhase::Idle | TrainerPhase::SwitchPoint => {
            let ready = secs(t_us.saturating_sub(s.target_since_us)) >= params.reaction_s;
            if let (true, Some(p)) = (ready, pick_point(view, &target, params)) {
                enter(&mut s, TrainerPhase::Approach(p), t_us, view.leader_pos);
                return trainer_policy_step(&s, view, t_us, params, map);
            }
            (s, hold_still)
        }
        TrainerPhase::Approach(p) => {
            let goal = map_follower_to_leader(&view.points.get(p), map);
            let close = (mapped - view.points.get(p)).norm() <= params.grab_distance;
            if elapsed >= params.approach_s && close && view.grab.engaged().is_none() {
                enter(&mut s, TrainerPhase::Grab(p), t_us, view.leader_pos);
                return (s, OperatorCommand { target: goal, grip: true });
            }
            let cmd = min_jerk(&s.seg_start, &goal, params.approach_s, elapsed);
            (s, OperatorCommand { target: cmd, grip: false })
        }
        TrainerPhase::Grab(p) => {
            let goal = map_follower_to_leader(&view.points.get(p), map);
            match view.grab {
                Grab::Engaged(q) if q == p => {
                    enter(&mut s, TrainerPhase::Transport(p), t_us, view.leader_pos);
                    (s, OperatorCommand { target: view.leader_pos, grip: true })
                }
                Grab::Engaged(_) => {
                    enter(&mut s, TrainerPhase::Release, t_us, view.leader_pos);
                    (s, hold_still)
                }
                _ if elapsed >= params.grab_timeout_s => {
                    enter(&mut s, TrainerPhase::Release, t_us, view.leader_pos);
                    (s, hold_still)
                }
                _ => (s, OperatorCommand { target: goal, grip: true }),
            }
        }
        TrainerPhase::Transport(p) | TrainerPhase::Hold(p) => {
            if view.grab != Grab::Engaged(p) {
                enter(&mut s, TrainerPhase::SwitchPoint, t_us, view.leader_pos);
                return (s, hold_still);
            }
            let err = target.point(p) - view.points.get(p);
            let place = |corr: &Vector3<f64>| map_follower_to_leader(&(target.point(p) + corr), map);
            if let TrainerPhase::Transport(_) = s.phase {
                if elapsed >= params.transport_s {
                    enter(&mut s, TrainerPhase::Hold(p), t_us, view.leader_pos);
                } else {
                    let cmd = min_jerk(&s.seg_start, &place(&s.correction), params.transport_s, elapsed);
                    return (s, OperatorCommand { target: cmd, grip: true });
                }
            }
            s.correction += err * (params.correction_gain * dt);
            let n = s.correction.norm();
            if n > params.correction_max {
                s.correction *= params.correction_max / n;
            }
            if err.norm() <= params.settle_tol {
                let since = *s.settle_since_us.get_or_insert(t_us);
                let other_ok = point_error(view, &target, p.other()) <= params.other_tol;
                if secs(t_us - since) >= params.settle_s && !other_ok {
                    enter(&mut s, TrainerPhase::Release, t_us, view.leader_pos);
                    return (s, hold_still);
                }
            } else {
                s.settle_since_us = None;
            }
            (s, OperatorCommand { target: place(&s.correction), grip: true })
        }
        TrainerPhase::Release => {
            if elapsed >= params.release_s && view.grab.engaged().is_none() {
                s.correction = Vector3::zeros();
                enter(&mut s, TrainerPhase::SwitchPoint, t_us, view.leader_pos);
                return trainer_policy_step(&s, view, t_us, params, map);
            }
            (s, hold_still)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraineeParams {
    /// Delay before imitation starts in the visual condition, s.
    pub reaction_s: f64,
    /// Joint-space imitation stiffness, N·m/rad.
    pub kp: [f64; 6],
    /// Joint-space imitation damping, N·m·s/rad.
    pub kd: [f64; 6],
    /// Std-dev of the initial per-joint imitation error, rad.
    pub imitation_error: f64,
    /// Time constant with which the imitation error is corrected, s.
    pub correction_tau_s: f64,
    /// Fraction of the arm's own gravity load the trainee carries.
    pub self_support: f64,
}

impl Default for TraineeParams {
    fn default() -> Self {
        Self {
            reaction_s: 0.8,
            kp: [8.0; 6],
            kd: [1.0; 6],
            imitation_error: 0.15,
            correction_tau_s: 2.0,
            self_support: 0.35,
        }
    }
}

/// Joint-space imitation torque toward `q_goal`; zero before the reaction delay.
pub fn vd_trainee_policy(
    q: &JointVector,
    qdot: &JointVector,
    q_goal: &JointVector,
    elapsed_s: f64,
    params: &TraineeParams,
) -> JointVector {
    if elapsed_s < params.reaction_s {
        return JointVector::zeros();
    }
    let kp = JointVector::from(params.kp);
    let kd = JointVector::from(params.kd);
    kp.component_mul(&(q_goal - q)) - kd.component_mul(qdot)
}

/// Torque with which the trainee carries part of their own arm weight.
pub fn postural_support(q: &JointVector, params: &TraineeParams, kin: &KinematicParams) -> JointVector {
    -gravity_torques_unchecked(q, kin) * params.self_support
}

/// Stateful trainee: draws a fresh imitation error for every new visual
/// target and lets it decay as the trainee corrects.
#[derive(Debug, Clone)]
pub struct TraineeModel {
    params: TraineeParams,
    rng: Xoshiro256PlusPlus,
    current: Option<(PoseId, u64)>,
    offset: JointVector,
}

impl TraineeModel {
    pub fn new(params: TraineeParams, seed: u64) -> Self {
        Self {
            params,
            rng: Xoshiro256PlusPlus::seed_from_u64(seed),
            current: None,
            offset: JointVector::zeros(),
        }
    }

    pub fn params(&self) -> &TraineeParams {
        &self.params
    }

    /// Voluntary torque at `t_us`. `imitate` carries the pose to imitate in
    /// the visual condition; `None` means the trainee is passively guided.
    pub fn torque(
        &mut self,
        q: &JointVector,
        qdot: &JointVector,
        imitate: Option<&PoseTarget>,
        t_us: u64,
        kin: &KinematicParams,
    ) -> JointVector {
        let support = postural_support(q, &self.params, kin);
        let Some(target) = imitate else {
            self.current = None;
            return support;
        };
        if self.current.map(|(p, _)| p) != Some(target.pose) {
            self.current = Some((target.pose, t_us));
            let sd = self.params.imitation_error;
            self.offset = if sd > 0.0 {
                let normal = Normal::new(0.0, sd).expect("finite std-dev");
                JointVector::from_fn(|_, _| normal.sample(&mut self.rng))
            } else {
                JointVector::zeros()
            };
        }
        let since = self.current.map(|(_, t)| t).unwrap_or(t_us);
        let elapsed = secs(t_us.saturating_sub(since));
        let active = (elapsed - self.params.reaction_s).max(0.0);
        let decay = if self.params.correction_tau_s > 0.0 {
            (-active / self.params.correction_tau_s).exp()
        } else {
            0.0
        };
        let q_goal = kin.limits.clamp(&(target.q_target + self.offset * decay)).0;
        support + vd_trainee_policy(q, qdot, &q_goal, elapsed, &self.params)
    }
}

/// Helper for tests and callers that reason in seconds.
pub fn micros(t_s: f64) -> u64 {
    to_us(t_s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::map_follower_to_leader;
    use crate::kinematics::forward_kinematics_unchecked;
    use crate::task::PoseLibrary;

    #[test]
    fn min_jerk_endpoints_and_midpoint() {
        let a = Vector3::new(1.0, -2.0, 0.5);
        let b = Vector3::new(3.0, 2.0, -0.5);
        assert_eq!(min_jerk(&a, &b, 2.0, 0.0), a);
        assert_eq!(min_jerk(&a, &b, 2.0, 2.0), b);
        assert!((min_jerk(&a, &b, 2.0, 1.0) - (a + b) / 2.0).norm() < 1e-15);
        assert_eq!(min_jerk(&a, &b, 2.0, -1.0), a);
        assert_eq!(min_jerk(&a, &b, 2.0, 5.0), b);
    }

    #[test]
    fn min_jerk_speed_is_bell_shaped() {
        let a = Vector3::zeros();
        let b = Vector3::new(0.3, 0.0, 0.0);
        let h = 1e-4;
        let speeds: Vec<f64> = (0..=100)
            .map(|i| {
                let t = i as f64 / 100.0;
                (min_jerk(&a, &b, 1.0, t + h) - min_jerk(&a, &b, 1.0, t - h)).norm() / (2.0 * h)
            })
            .collect();
        let peak = speeds
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .unwrap()
            .0;
        assert_eq!(peak, 50);
        assert!(speeds[..=peak].windows(2).all(|w| w[1] >= w[0]));
        assert!(speeds[peak..].windows(2).all(|w| w[1] <= w[0]));
        // one-sided at the ends: zero velocity at both boundaries
        assert!(speeds[0] < 1e-6 && speeds[100] < 1e-6);
        assert!((speeds[50] - 1.875 * 0.3).abs() < 1e-6);
    }

    #[test]
    fn vd_policy_examples() {
        let p = TraineeParams::default();
        let q = JointVector::zeros();
        let mut goal = JointVector::zeros();
        goal[3] = 0.5;
        assert_eq!(vd_trainee_policy(&q, &q, &goal, 0.5, &p), JointVector::zeros());
        assert_eq!(vd_trainee_policy(&goal, &q, &goal, 2.0, &p), JointVector::zeros());
        let tau = vd_trainee_policy(&q, &q, &goal, 2.0, &p);
        assert_eq!(tau[3], 4.0);
        assert_eq!(tau.iter().filter(|t| **t != 0.0).count(), 1);
    }

    fn view_at(q: JointVector, leader: Vector3<f64>, grab: Grab, target: PoseTarget) -> WorldView {
        WorldView {
            points: forward_kinematics_unchecked(&q, &KinematicParams::default()),
            grab,
            target: Some(target),
            confirmed: false,
            leader_pos: leader,
        }
    }

    #[test]
    fn trainer_starts_with_elbow_approach() {
        let kin = KinematicParams::default();
        let lib = PoseLibrary::default();
        let target = lib.target(PoseId::Exult, &kin).unwrap();
        let map = FrameMap::default();
        let params = TrainerParams::default();
        let view = view_at(lib.q(PoseId::Base), Vector3::new(0.05, 0.05, 0.05), Grab::Free, target);
        let (s, cmd) = trainer_policy_step(&TrainerPolicyState::default(), &view, 0, &params, &map);
        assert_eq!(s.phase, TrainerPhase::Idle);
        assert!(!cmd.grip);
        let (s, cmd) = trainer_policy_step(&s, &view, micros(0.6), &params, &map);
        assert_eq!(s.phase, TrainerPhase::Approach(GraspPoint::Elbow));
        assert!(!cmd.grip);
    }

    #[test]
    fn trainer_never_closes_grip_far_away() {
        let kin = KinematicParams::default();
        let lib = PoseLibrary::default();
        let target = lib.target(PoseId::Hat, &kin).unwrap();
        let map = FrameMap::default();
        let params = TrainerParams::default();
        // the leader never moves, so the elbow stays out of reach
        let view = view_at(lib.q(PoseId::Base), Vector3::new(0.09, 0.0, 0.06), Grab::Free, target);
        let mut s = TrainerPolicyState::default();
        for k in 0..5000u64 {
            let (n, cmd) = trainer_policy_step(&s, &view, k * 2000, &params, &map);
            let d = (map_leader_to_follower(&view.leader_pos, &map) - view.points.elbow).norm();
            assert!(!cmd.grip || d <= 0.10);
            s = n;
        }
    }

    #[test]
    fn settled_elbow_is_released_for_wrist() {
        let kin = KinematicParams::default();
        let lib = PoseLibrary::default();
        let target = lib.target(PoseId::Stop, &kin).unwrap();
        let map = FrameMap::default();
        let params = TrainerParams::default();
        // elbow on target, wrist far from it
        let mut q = lib.q(PoseId::Stop);
        q[3] = 0.2;
        let pts = forward_kinematics_unchecked(&q, &kin);
        assert!((pts.elbow - target.elbow).norm() < 1e-12);
        let leader = map_follower_to_leader(&pts.elbow, &map);
        let view = view_at(q, leader, Grab::Engaged(GraspPoint::Elbow), target);
        let mut s = TrainerPolicyState {
            phase: TrainerPhase::Hold(GraspPoint::Elbow),
            target_pose: Some(PoseId::Stop),
            ..Default::default()
        };
        let mut t = 0;
        while s.phase == TrainerPhase::Hold(GraspPoint::Elbow) {
            t += 2000;
            s = trainer_policy_step(&s, &view, t, &params, &map).0;
            assert!(t < micros(2.0));
        }
        assert_eq!(s.phase, TrainerPhase::Release);
        assert!(secs(t) >= 0.5);
        let released = WorldView {
            grab: Grab::Free,
            ..view
        };
        let mut phase = s.phase;
        while phase == TrainerPhase::Release {
            t += 2000;
            s = trainer_policy_step(&s, &released, t, &params, &map).0;
            phase = s.phase;
        }
        assert_eq!(phase, TrainerPhase::Approach(GraspPoint::Wrist));
    }

    #[test]
    fn confirmed_trial_goes_idle() {
        let kin = KinematicParams::default();
        let lib = PoseLibrary::default();
        let target = lib.target(PoseId::Drink, &kin).unwrap();
        let map = FrameMap::default();
        let mut view = view_at(lib.q(PoseId::Drink), Vector3::zeros(), Grab::Engaged(GraspPoint::Wrist), target);
        view.confirmed = true;
        let s = TrainerPolicyState {
            phase: TrainerPhase::Hold(GraspPoint::Wrist),
            ..Default::default()
        };
        let (s, cmd) = trainer_policy_step(&s, &view, 1000, &TrainerParams::default(), &map);
        assert_eq!(s.phase, TrainerPhase::Idle);
        assert!(!cmd.grip);
    }

    #[test]
    fn trainee_model_is_seeded() {
        let kin = KinematicParams::default();
        let lib = PoseLibrary::default();
        let target = lib.target(PoseId::Phone, &kin).unwrap();
        let q = lib.q(PoseId::Base);
        let z = JointVector::zeros();
        let run = |seed| {
            let mut m = TraineeModel::new(TraineeParams::default(), seed);
            m.torque(&q, &z, Some(&target), 0, &kin);
            m.torque(&q, &z, Some(&target), micros(1.0), &kin)
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
        // passive trainee only carries the residual weight
        let mut m = TraineeModel::new(TraineeParams::default(), 1);
        let tau = m.torque(&q, &z, None, 0, &kin);
        assert!((tau + gravity_torques_unchecked(&q, &kin) * 0.35).amax() < 1e-12);
    }
}
