//! Pose-guidance task: pose library, trial state machine and seeded session
//! schedule.
//!
//! A trial shows a target pose, waits until both graspable points are within
//! the match tolerance of the target's points, requires the match to be held
//! without interruption for the hold time, then asks for a return to the base
//! pose. Times are integer microseconds of simulation time so hold durations
//! compare exactly.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::kinematics::{
    forward_kinematics, GraspPoint, GraspablePoints, JointVector, KinematicParams, KinematicsError,
};

pub const US_PER_S: u64 = 1_000_000;

pub fn secs(t_us: u64) -> f64 {
    t_us as f64 / US_PER_S as f64
}

pub fn to_us(t_s: f64) -> u64 {
    (t_s * US_PER_S as f64).round().max(0.0) as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseId {
    Exult,
    Drink,
    Phone,
    Hat,
    Stop,
    Base,
}

pub const ADL_POSES: [PoseId; 5] = [
    PoseId::Exult,
    PoseId::Drink,
    PoseId::Phone,
    PoseId::Hat,
    PoseId::Stop,
];

impl PoseId {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        [ADL_POSES.as_slice(), &[PoseId::Base]]
            .concat()
            .into_iter()
            .find(|p| p.code() == c)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PoseId::Exult => "exult",
            PoseId::Drink => "drink",
            PoseId::Phone => "phone",
            PoseId::Hat => "hat",
            PoseId::Stop => "stop",
            PoseId::Base => "base",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        (0..6).filter_map(Self::from_code).find(|p| p.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    /// Haptic demonstration: coupling active.
    HD,
    /// Visual demonstration: trainee imitates, no coupling.
    VD,
}

impl Condition {
    pub fn code(self) -> u8 {
        match self {
            Condition::HD => 0,
            Condition::VD => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Condition::HD),
            1 => Some(Condition::VD),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::HD => "HD",
            Condition::VD => "VD",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "HD" => Some(Condition::HD),
            "VD" => Some(Condition::VD),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionOrder {
    #[default]
    VdFirst,
    HdFirst,
}

impl ConditionOrder {
    pub fn conditions(self) -> [Condition; 2] {
        match self {
            ConditionOrder::VdFirst => [Condition::VD, Condition::HD],
            ConditionOrder::HdFirst => [Condition::HD, Condition::VD],
        }
    }
}

/// Joint-space definition of every pose, radians. The values are plausible
/// stand-ins; the graspable-point targets are derived from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseLibrary {
    pub exult: [f64; 6],
    pub drink: [f64; 6],
    pub phone: [f64; 6],
    pub hat: [f64; 6],
    pub stop: [f64; 6],
    pub base: [f64; 6],
}

impl Default for PoseLibrary {
    fn default() -> Self {
        Self {
            exult: [0.5, 2.4, 0.0, 0.35, 0.0, 0.0],
            drink: [0.1, 0.8, 0.0, 2.1, 1.2, 0.0],
            phone: [0.35, 0.6, 0.5, 2.3, 0.5, 0.0],
            hat: [0.6, 1.8, 0.3, 1.9, 0.0, 0.0],
            stop: [0.2, 1.2, 0.0, 1.4, 0.0, 0.3],
            base: [0.1, 0.3, 0.0, 0.9, 0.0, 0.0],
        }
    }
}

impl PoseLibrary {
    pub fn q(&self, pose: PoseId) -> JointVector {
        JointVector::from(match pose {
            PoseId::Exult => self.exult,
            PoseId::Drink => self.drink,
            PoseId::Phone => self.phone,
            PoseId::Hat => self.hat,
            PoseId::Stop => self.stop,
            PoseId::Base => self.base,
        })
    }

    pub fn target(&self, pose: PoseId, kin: &KinematicParams) -> Result<PoseTarget, KinematicsError> {
        let q = self.q(pose);
        let pts = forward_kinematics(&q, kin)?;
        Ok(PoseTarget {
            pose,
            q_target: q,
            elbow: pts.elbow,
            wrist: pts.wrist,
        })
    }

    pub fn targets(&self, kin: &KinematicParams) -> Result<PoseTargets, KinematicsError> {
        let mut all = Vec::with_capacity(6);
        for code in 0..6 {
            all.push(self.target(PoseId::from_code(code).expect("valid code"), kin)?);
        }
        Ok(PoseTargets { all })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseTarget {
    pub pose: PoseId,
    pub q_target: JointVector,
    pub elbow: nalgebra::Vector3<f64>,
    pub wrist: nalgebra::Vector3<f64>,
}

impl PoseTarget {
    pub fn point(&self, p: GraspPoint) -> nalgebra::Vector3<f64> {
        match p {
            GraspPoint::Elbow => self.elbow,
            GraspPoint::Wrist => self.wrist,
        }
    }
}

/// Resolved targets for every pose in the library.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseTargets {
    all: Vec<PoseTarget>,
}

impl PoseTargets {
    pub fn get(&self, pose: PoseId) -> &PoseTarget {
        &self.all[pose.code() as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskParams {
    /// Per-point match tolerance, m.
    pub match_tol: f64,
    /// Uninterrupted match time before a pose counts as reached, s.
    pub hold_s: f64,
    /// Hold time at the base pose, s.
    pub base_hold_s: f64,
}

impl Default for TaskParams {
    fn default() -> Self {
        Self {
            match_tol: 0.07,
            hold_s: 3.0,
            base_hold_s: 0.0,
        }
    }
}

pub fn check_pose_match(points: &GraspablePoints, target: &PoseTarget, tol: f64) -> bool {
    (points.elbow - target.elbow).norm() <= tol && (points.wrist - target.wrist).norm() <= tol
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    ShowTarget,
    Reaching,
    Holding { since_us: u64 },
    Confirmed,
    ReturnToBase { since_us: Option<u64> },
    Complete,
}

impl Phase {
    pub fn code(&self) -> u8 {
        match self {
            Phase::ShowTarget => 0,
            Phase::Reaching => 1,
            Phase::Holding { .. } => 2,
            Phase::Confirmed => 3,
            Phase::ReturnToBase { .. } => 4,
            Phase::Complete => 5,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Phase::ShowTarget => "show_target",
            Phase::Reaching => "reaching",
            Phase::Holding { .. } => "holding",
            Phase::Confirmed => "confirmed",
            Phase::ReturnToBase { .. } => "return_to_base",
            Phase::Complete => "complete",
        }
    }

    /// True while the trial's analyzed segment is running.
    pub fn is_analyzed_leg(&self) -> bool {
        matches!(
            self,
            Phase::ShowTarget | Phase::Reaching | Phase::Holding { .. } | Phase::Confirmed
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskEventKind {
    Status,
    TargetShown,
    HoldStarted,
    HoldBroken,
    PoseConfirmed,
    ReturnStarted,
    BaseReached,
    TrialTimedOut,
    ReturnTimedOut,
    GrabEngaged,
    GrabReleased,
    SessionComplete,
}

impl TaskEventKind {
    const ALL: [TaskEventKind; 12] = [
        TaskEventKind::Status,
        TaskEventKind::TargetShown,
        TaskEventKind::HoldStarted,
        TaskEventKind::HoldBroken,
        TaskEventKind::PoseConfirmed,
        TaskEventKind::ReturnStarted,
        TaskEventKind::BaseReached,
        TaskEventKind::TrialTimedOut,
        TaskEventKind::ReturnTimedOut,
        TaskEventKind::GrabEngaged,
        TaskEventKind::GrabReleased,
        TaskEventKind::SessionComplete,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Self::ALL.get(c as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskEventKind::Status => "status",
            TaskEventKind::TargetShown => "target_shown",
            TaskEventKind::HoldStarted => "hold_started",
            TaskEventKind::HoldBroken => "hold_broken",
            TaskEventKind::PoseConfirmed => "pose_confirmed",
            TaskEventKind::ReturnStarted => "return_started",
            TaskEventKind::BaseReached => "base_reached",
            TaskEventKind::TrialTimedOut => "trial_timed_out",
            TaskEventKind::ReturnTimedOut => "return_timed_out",
            TaskEventKind::GrabEngaged => "grab_engaged",
            TaskEventKind::GrabReleased => "grab_released",
            TaskEventKind::SessionComplete => "session_complete",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskEvent {
    pub t_us: u64,
    pub kind: TaskEventKind,
    pub trial_id: u32,
    pub pose: PoseId,
    pub condition: Condition,
    pub block: u8,
    pub familiarization: bool,
    pub point: Option<GraspPoint>,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduledTrial {
    pub trial_id: u32,
    pub condition: Condition,
    /// 0 for familiarization, otherwise 1-based block index.
    pub block: u8,
    pub familiarization: bool,
    pub pose: PoseId,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialState {
    pub spec: ScheduledTrial,
    pub target: PoseTarget,
    pub base: PoseTarget,
    pub phase: Phase,
    pub shown_at_us: u64,
    pub confirmed_at_us: Option<u64>,
}

impl TrialState {
    pub fn new(spec: ScheduledTrial, targets: &PoseTargets, shown_at_us: u64) -> Self {
        Self {
            spec,
            target: *targets.get(spec.pose),
            base: *targets.get(PoseId::Base),
            phase: Phase::ShowTarget,
            shown_at_us,
            confirmed_at_us: None,
        }
    }

    fn event(&self, kind: TaskEventKind, t_us: u64, value: f64) -> TaskEvent {
        TaskEvent {
            t_us,
            kind,
            trial_id: self.spec.trial_id,
            pose: self.spec.pose,
            condition: self.spec.condition,
            block: self.spec.block,
            familiarization: self.spec.familiarization,
            point: None,
            value,
        }
    }

    /// The pose currently asked for: the trial target until confirmed, then base.
    pub fn active_target(&self) -> &PoseTarget {
        match self.phase {
            Phase::ReturnToBase { .. } | Phase::Complete => &self.base,
            _ => &self.target,
        }
    }

    pub fn hold_remaining(&self, t_us: u64, params: &TaskParams) -> Option<f64> {
        match self.phase {
            Phase::Holding { since_us } => {
                Some((params.hold_s - secs(t_us.saturating_sub(since_us))).max(0.0))
            }
            _ => None,
        }
    }

    pub fn record(&self) -> TrialRecord {
        TrialRecord {
            spec: self.spec,
            shown_at_us: self.shown_at_us,
            confirmed_at_us: self.confirmed_at_us,
        }
    }

    /// Abandons the reach (timeout). The trial stays unconfirmed.
    pub fn time_out(&self, t_us: u64) -> (TrialState, Vec<TaskEvent>) {
        let mut next = *self;
        match self.phase {
            Phase::ShowTarget | Phase::Reaching | Phase::Holding { .. } => {
                next.phase = Phase::ReturnToBase { since_us: None };
                (next, vec![self.event(TaskEventKind::TrialTimedOut, t_us, 0.0)])
            }
            Phase::Confirmed | Phase::ReturnToBase { .. } => {
                next.phase = Phase::Complete;
                (next, vec![self.event(TaskEventKind::ReturnTimedOut, t_us, 0.0)])
            }
            Phase::Complete => (next, Vec::new()),
        }
    }
}

fn held_long_enough(since_us: u64, t_us: u64, hold_s: f64) -> bool {
    t_us.saturating_sub(since_us) >= to_us(hold_s)
}

/// Advances the trial by one observation of the graspable points at `t_us`.
pub fn trial_step(
    trial: &TrialState,
    points: &GraspablePoints,
    t_us: u64,
    params: &TaskParams,
) -> (TrialState, Vec<TaskEvent>) {
    let mut s = *trial;
    let mut events = Vec::new();
    if s.phase == Phase::ShowTarget {
        s.shown_at_us = t_us;
        s.phase = Phase::Reaching;
        events.push(s.event(TaskEventKind::TargetShown, t_us, 0.0));
    }
    match s.phase {
        Phase::ShowTarget => unreachable!("handled above"),
        Phase::Reaching => {
            if check_pose_match(points, &s.target, params.match_tol) {
                s.phase = Phase::Holding { since_us: t_us };
                events.push(s.event(TaskEventKind::HoldStarted, t_us, 0.0));
                if held_long_enough(t_us, t_us, params.hold_s) {
                    confirm(&mut s, t_us, &mut events);
                }
            }
        }
        Phase::Holding { since_us } => {
            if !check_pose_match(points, &s.target, params.match_tol) {
                s.phase = Phase::Reaching;
                events.push(s.event(TaskEventKind::HoldBroken, t_us, secs(t_us - since_us)));
            } else if held_long_enough(since_us, t_us, params.hold_s) {
                confirm(&mut s, t_us, &mut events);
            }
        }
        Phase::Confirmed => {
            s.phase = Phase::ReturnToBase { since_us: None };
            events.push(s.event(TaskEventKind::ReturnStarted, t_us, 0.0));
        }
        Phase::ReturnToBase { since_us } => {
            if check_pose_match(points, &s.base, params.match_tol) {
                let since = since_us.unwrap_or(t_us);
                if held_long_enough(since, t_us, params.base_hold_s) {
                    s.phase = Phase::Complete;
                    events.push(s.event(TaskEventKind::BaseReached, t_us, 0.0));
                } else {
                    s.phase = Phase::ReturnToBase {
                        since_us: Some(since),
                    };
                }
            } else {
                s.phase = Phase::ReturnToBase { since_us: None };
            }
        }
        Phase::Complete => {}
    }
    (s, events)
}

fn confirm(s: &mut TrialState, t_us: u64, events: &mut Vec<TaskEvent>) {
    s.phase = Phase::Confirmed;
    s.confirmed_at_us = Some(t_us);
    let completion = secs(t_us - s.shown_at_us);
    events.push(s.event(TaskEventKind::PoseConfirmed, t_us, completion));
}

/// What the analyzer needs to know about one finished trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub spec: ScheduledTrial,
    pub shown_at_us: u64,
    pub confirmed_at_us: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub condition_order: ConditionOrder,
    pub familiarization_trials: usize,
    pub blocks: u8,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            condition_order: ConditionOrder::VdFirst,
            familiarization_trials: 3,
            blocks: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSchedule {
    pub seed: u64,
    pub condition_order: ConditionOrder,
    pub trials: Vec<ScheduledTrial>,
}

impl SessionSchedule {
    pub fn analyzed(&self) -> impl Iterator<Item = &ScheduledTrial> {
        self.trials.iter().filter(|t| !t.familiarization)
    }

    pub fn block(&self, condition: Condition, block: u8) -> Vec<PoseId> {
        self.trials
            .iter()
            .filter(|t| t.condition == condition && t.block == block && !t.familiarization)
            .map(|t| t.pose)
            .collect()
    }
}

/// Deterministic session order. Pose permutations come from a Xoshiro256++
/// generator seeded with `seed` (via `seed_from_u64`) and a Fisher-Yates
/// shuffle; per condition, familiarization draws the first N poses of a fresh
/// permutation, then each block is a fresh permutation of all five poses.
pub fn build_session(cfg: &ScheduleConfig, seed: u64) -> SessionSchedule {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let mut trials = Vec::new();
    let mut next_id = 1u32;
    let mut push = |trials: &mut Vec<ScheduledTrial>, condition, block, pose| {
        trials.push(ScheduledTrial {
            trial_id: next_id,
            condition,
            block,
            familiarization: block == 0,
            pose,
        });
        next_id += 1;
    };
    for condition in cfg.condition_order.conditions() {
        let mut fam = ADL_POSES;
        fam.shuffle(&mut rng);
        for pose in fam.iter().take(cfg.familiarization_trials.min(ADL_POSES.len())) {
            push(&mut trials, condition, 0, *pose);
        }
        for block in 1..=cfg.blocks {
            let mut order = ADL_POSES;
            order.shuffle(&mut rng);
            for pose in order {
                push(&mut trials, condition, block, pose);
            }
        }
    }
    SessionSchedule {
        seed,
        condition_order: cfg.condition_order,
        trials,
    }
}
