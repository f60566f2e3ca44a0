//! One experimental session as three nodes (leader, controller, follower)
//! that talk only through encoded datagrams on a [`Transport`]. Every plant
//! tick runs the leader, then the controller, then the follower, so an ideal
//! link carries each message into the next node's tick.

use nalgebra::Vector3;
use thiserror::Error;

use crate::config::{to_micros_exact, ConfigError, SessionConfig, TransportKind};
use crate::coupling::{
    controller_step, map_leader_to_follower, CouplingConfig, CouplingInput, CouplingOutput,
    CouplingState, FrameMap, Grab,
};
use crate::kinematics::{
    forward_kinematics_unchecked, point_jacobian_unchecked, GraspPoint, GraspablePoints,
    JointVector, KinematicParams,
};
use crate::leader::{device_step, DeviceParams, LeaderError, LeaderState};
use crate::netproto::{
    decode, encode, Acceptance, Datagram, FollowerStateMsg, ForceCmdMsg, LeaderStateMsg,
    LoopbackTransport, NodeId, Payload, SeqCounter, SeqTracker, TaskEventMsg, TorqueCmdMsg,
    Transport, TransportError, TransportStats, UdpTransport,
};
use crate::operators::{
    trainer_policy_step, OperatorCommand, TraineeModel, TrainerParams, TrainerPolicyState,
    WorldView,
};
use crate::plant::{plant_step, FollowerState, PlantError, PlantParams};
use crate::task::{
    build_session, check_pose_match, secs, to_us, Condition, Phase, PoseId, PoseTargets,
    ScheduledTrial, SessionSchedule, TaskEvent, TaskEventKind, TaskParams, TrialRecord,
    TrialState,
};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("follower fault at t={t_s:.3} s: {source}")]
    Plant { t_s: f64, source: PlantError },
    #[error("leader device fault: {0}")]
    Device(#[from] LeaderError),
    #[error("session exceeded {limit_s} s of simulated time")]
    Overrun { limit_s: f64 },
}

const FLAG_FAMILIARIZATION: u8 = 1;
const FLAG_MATCHED: u8 = 1 << 1;
const FLAG_ACTIVE: u8 = 1 << 2;
const FLAG_DONE: u8 = 1 << 3;
const NO_POSE: u8 = 0xFF;

/// Task state as broadcast by the controller in every TaskEvent datagram.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskStatus {
    pub kind: TaskEventKind,
    pub phase: u8,
    /// Pose currently asked for (base during the return leg).
    pub pose: Option<PoseId>,
    pub condition: Condition,
    pub block: u8,
    pub grab: Grab,
    pub familiarization: bool,
    pub matched: bool,
    pub active: bool,
    pub done: bool,
    pub trial_id: u32,
    pub value: f64,
}

impl TaskStatus {
    pub fn to_msg(&self) -> TaskEventMsg {
        let mut flags = 0;
        for (on, bit) in [
            (self.familiarization, FLAG_FAMILIARIZATION),
            (self.matched, FLAG_MATCHED),
            (self.active, FLAG_ACTIVE),
            (self.done, FLAG_DONE),
        ] {
            if on {
                flags |= bit;
            }
        }
        TaskEventMsg {
            kind: self.kind.code(),
            phase: self.phase,
            pose: self.pose.map_or(NO_POSE, PoseId::code),
            condition: self.condition.code(),
            block: self.block,
            grab: self.grab.code(),
            flags,
            trial_id: self.trial_id,
            value: self.value,
        }
    }

    /// `None` when a byte-coded field is out of range.
    pub fn from_msg(m: &TaskEventMsg) -> Option<Self> {
        Some(Self {
            kind: TaskEventKind::from_code(m.kind)?,
            phase: m.phase,
            pose: if m.pose == NO_POSE {
                None
            } else {
                Some(PoseId::from_code(m.pose)?)
            },
            condition: Condition::from_code(m.condition)?,
            block: m.block,
            grab: Grab::from_code(m.grab)?,
            familiarization: m.flags & FLAG_FAMILIARIZATION != 0,
            matched: m.flags & FLAG_MATCHED != 0,
            active: m.flags & FLAG_ACTIVE != 0,
            done: m.flags & FLAG_DONE != 0,
            trial_id: m.trial_id,
            value: m.value,
        })
    }

    pub fn confirmed(&self) -> bool {
        self.phase == Phase::Confirmed.code()
    }
}

/// Source of the trainer's hand motion at the leader node.
pub trait LeaderInput: Send {
    fn command(&mut self, view: &WorldView, t_us: u64) -> OperatorCommand;
}

/// Scripted trainer policy.
pub struct ScriptedTrainer {
    state: TrainerPolicyState,
    params: TrainerParams,
    map: FrameMap,
}

impl ScriptedTrainer {
    pub fn new(params: TrainerParams, map: FrameMap) -> Self {
        Self {
            state: TrainerPolicyState::default(),
            params,
            map,
        }
    }
}

impl LeaderInput for ScriptedTrainer {
    fn command(&mut self, view: &WorldView, t_us: u64) -> OperatorCommand {
        let (s, cmd) = trainer_policy_step(&self.state, view, t_us, &self.params, &self.map);
        self.state = s;
        cmd
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct NodeStats {
    pub received: u64,
    pub malformed: u64,
    pub stale: u64,
}

struct Inbox {
    tracker: SeqTracker,
    stats: NodeStats,
}

impl Inbox {
    fn new() -> Self {
        Self {
            tracker: SeqTracker::new(),
            stats: NodeStats::default(),
        }
    }

    /// Decodes and filters everything delivered to `node`, oldest first.
    fn drain(&mut self, node: NodeId, transport: &mut dyn Transport, now: f64) -> Vec<Datagram> {
        let mut out = Vec::new();
        for (peer, bytes) in transport.recv(node, now) {
            self.stats.received += 1;
            let dg = match decode(&bytes) {
                Ok(dg) => dg,
                Err(e) => {
                    self.stats.malformed += 1;
                    log::warn!("{node:?} dropped datagram from {peer:?}: {e}");
                    continue;
                }
            };
            match self.tracker.accept(peer, dg.payload.msg_type(), dg.seq) {
                Acceptance::Accept => out.push(dg),
                Acceptance::RejectStale => self.stats.stale += 1,
            }
        }
        out
    }
}

struct Outbox {
    node: NodeId,
    seq: SeqCounter,
}

impl Outbox {
    fn send(
        &mut self,
        transport: &mut dyn Transport,
        to: NodeId,
        t_us: u64,
        payload: Payload,
    ) -> Result<(), TransportError> {
        let dg = Datagram {
            seq: self.seq.next(payload.msg_type()),
            t_us,
            payload,
        };
        transport.send(self.node, to, &encode(&dg), secs(t_us))
    }
}

fn v3(a: &[f64; 3]) -> Vector3<f64> {
    Vector3::from(*a)
}

fn points_of(m: &FollowerStateMsg) -> GraspablePoints {
    GraspablePoints {
        elbow: v3(&m.elbow),
        wrist: v3(&m.wrist),
    }
}

pub struct LeaderNode {
    state: LeaderState,
    params: DeviceParams,
    targets: PoseTargets,
    inbox: Inbox,
    outbox: Outbox,
    status: Option<TaskStatus>,
    points: Option<GraspablePoints>,
    feedback: Vector3<f64>,
    dt: f64,
}

impl LeaderNode {
    fn new(cfg: &SessionConfig, targets: PoseTargets, dt: f64) -> Self {
        Self {
            state: LeaderState::default(),
            params: cfg.device,
            targets,
            inbox: Inbox::new(),
            outbox: Outbox {
                node: NodeId::Leader,
                seq: SeqCounter::default(),
            },
            status: None,
            points: None,
            feedback: Vector3::zeros(),
            dt,
        }
    }

    pub fn state(&self) -> &LeaderState {
        &self.state
    }

    /// What the trainer can see right now.
    pub fn view(&self) -> Option<WorldView> {
        let points = self.points?;
        let status = self.status;
        let guiding = status.is_some_and(|s| s.active && s.condition == Condition::HD);
        Some(WorldView {
            points,
            grab: status.map_or(Grab::Free, |s| s.grab),
            target: status
                .filter(|_| guiding)
                .and_then(|s| s.pose)
                .map(|p| *self.targets.get(p)),
            confirmed: status.is_some_and(|s| s.confirmed()),
            leader_pos: self.state.pos,
        })
    }

    fn tick(
        &mut self,
        t_us: u64,
        input: &mut dyn LeaderInput,
        transport: &mut dyn Transport,
    ) -> Result<(), SessionError> {
        for dg in self.inbox.drain(NodeId::Leader, transport, secs(t_us)) {
            match dg.payload {
                Payload::ForceCmd(m) => self.feedback = v3(&m.force),
                Payload::FollowerState(m) => self.points = Some(points_of(&m)),
                Payload::TaskEvent(m) => match TaskStatus::from_msg(&m) {
                    Some(s) => self.status = Some(s),
                    None => self.inbox.stats.malformed += 1,
                },
                _ => {}
            }
        }
        let cmd = match self.view() {
            Some(view) => input.command(&view, t_us),
            None => OperatorCommand {
                target: self.state.pos,
                grip: false,
            },
        };
        self.state = device_step(&self.state, &cmd.target, cmd.grip, &self.feedback, self.dt, &self.params)?;
        let msg = LeaderStateMsg {
            pos: self.state.pos.into(),
            vel: self.state.vel.into(),
            grip_closed: self.state.grip_closed,
        };
        self.outbox
            .send(transport, NodeId::Controller, t_us, Payload::LeaderState(msg))?;
        Ok(())
    }
}

enum Flow {
    Waiting { until_us: u64, next: usize },
    Active {
        index: usize,
        trial: TrialState,
        return_since_us: Option<u64>,
    },
    Done,
}

pub struct ControllerNode {
    coupling_cfg: CouplingConfig,
    kin: KinematicParams,
    task: TaskParams,
    timing: crate::config::TimingParams,
    targets: PoseTargets,
    schedule: SessionSchedule,
    inbox: Inbox,
    outbox: Outbox,
    leader: Option<LeaderStateMsg>,
    follower: Option<FollowerStateMsg>,
    coupling: CouplingState,
    output: Option<CouplingOutput>,
    flow: Flow,
    records: Vec<TrialRecord>,
    events: Vec<TaskEvent>,
    skip_requested: bool,
}

impl ControllerNode {
    fn new(cfg: &SessionConfig, targets: PoseTargets) -> Self {
        Self {
            coupling_cfg: cfg.coupling,
            kin: cfg.kinematics,
            task: cfg.task,
            timing: cfg.timing,
            targets,
            schedule: build_session(&cfg.schedule, cfg.seed),
            inbox: Inbox::new(),
            outbox: Outbox {
                node: NodeId::Controller,
                seq: SeqCounter::default(),
            },
            leader: None,
            follower: None,
            coupling: CouplingState::default(),
            output: None,
            flow: Flow::Waiting {
                until_us: to_us(cfg.timing.start_delay_s),
                next: 0,
            },
            records: Vec::new(),
            events: Vec::new(),
            skip_requested: false,
        }
    }

    pub fn schedule(&self) -> &SessionSchedule {
        &self.schedule
    }

    pub fn records(&self) -> &[TrialRecord] {
        &self.records
    }

    pub fn events(&self) -> &[TaskEvent] {
        &self.events
    }

    pub fn grab(&self) -> Grab {
        self.coupling.grab
    }

    pub fn output(&self) -> Option<&CouplingOutput> {
        self.output.as_ref()
    }

    pub fn is_done(&self) -> bool {
        matches!(self.flow, Flow::Done)
    }

    pub fn trial(&self) -> Option<&TrialState> {
        match &self.flow {
            Flow::Active { trial, .. } => Some(trial),
            _ => None,
        }
    }

    /// The trial that is running, else the one coming up, else the last one.
    pub fn context(&self) -> Option<&ScheduledTrial> {
        let trials = &self.schedule.trials;
        match &self.flow {
            Flow::Active { trial, .. } => Some(&trial.spec),
            Flow::Waiting { next, .. } => trials.get(*next).or(trials.last()),
            Flow::Done => trials.last(),
        }
    }

    pub fn follower_points(&self) -> Option<GraspablePoints> {
        self.follower.as_ref().map(points_of)
    }

    fn condition(&self) -> Condition {
        self.context().map_or(Condition::HD, |t| t.condition)
    }

    fn context_event(&self, kind: TaskEventKind, t_us: u64, point: Option<GraspPoint>) -> TaskEvent {
        let spec = self.context().copied().unwrap_or(ScheduledTrial {
            trial_id: 0,
            condition: Condition::HD,
            block: 0,
            familiarization: false,
            pose: PoseId::Base,
        });
        TaskEvent {
            t_us,
            kind,
            trial_id: spec.trial_id,
            pose: spec.pose,
            condition: spec.condition,
            block: spec.block,
            familiarization: spec.familiarization,
            point,
            value: 0.0,
        }
    }

    pub fn status(&self, kind: TaskEventKind, value: f64) -> TaskStatus {
        let ctx = self.context().copied();
        let (phase, pose, matched, active) = match (&self.flow, self.follower_points()) {
            (Flow::Active { trial, .. }, pts) => {
                let target = trial.active_target();
                let matched = pts.is_some_and(|p| check_pose_match(&p, target, self.task.match_tol));
                (trial.phase.code(), Some(target.pose), matched, true)
            }
            _ => (Phase::Complete.code(), None, false, false),
        };
        TaskStatus {
            kind,
            phase,
            pose,
            condition: self.condition(),
            block: ctx.map_or(0, |t| t.block),
            grab: self.coupling.grab,
            familiarization: ctx.is_some_and(|t| t.familiarization),
            matched,
            active,
            done: self.is_done(),
            trial_id: ctx.map_or(0, |t| t.trial_id),
            value,
        }
    }

    fn advance_flow(&mut self, t_us: u64, points: &GraspablePoints) -> Vec<TaskEvent> {
        let mut events = Vec::new();
        if let Flow::Waiting { until_us, next } = self.flow {
            if t_us < until_us {
                return events;
            }
            match self.schedule.trials.get(next) {
                Some(spec) => {
                    self.flow = Flow::Active {
                        index: next,
                        trial: TrialState::new(*spec, &self.targets, t_us),
                        return_since_us: None,
                    }
                }
                None => {
                    self.flow = Flow::Done;
                    events.push(self.context_event(TaskEventKind::SessionComplete, t_us, None));
                    return events;
                }
            }
        }
        let Flow::Active {
            index,
            trial,
            return_since_us,
        } = &mut self.flow
        else {
            return events;
        };
        let (mut next, mut evs) = crate::task::trial_step(trial, points, t_us, &self.task);
        let reaching = matches!(next.phase, Phase::Reaching | Phase::Holding { .. });
        let skip = std::mem::take(&mut self.skip_requested);
        if reaching
            && (skip || t_us.saturating_sub(next.shown_at_us) >= to_us(self.timing.trial_timeout_s))
        {
            let (n, e) = next.time_out(t_us);
            next = n;
            evs.extend(e);
        }
        if matches!(next.phase, Phase::ReturnToBase { .. }) {
            let since = *return_since_us.get_or_insert(t_us);
            if skip || t_us - since >= to_us(self.timing.return_timeout_s) {
                let (n, e) = next.time_out(t_us);
                next = n;
                evs.extend(e);
            }
        }
        *trial = next;
        events.extend(evs);
        if next.phase == Phase::Complete {
            let index = *index;
            self.records.push(next.record());
            let following = self.schedule.trials.get(index + 1);
            let same_block = following
                .is_some_and(|f| f.condition == next.spec.condition && f.block == next.spec.block);
            let pause = if same_block {
                self.timing.inter_trial_s
            } else {
                self.timing.block_pause_s
            };
            self.flow = Flow::Waiting {
                until_us: t_us + to_us(pause),
                next: index + 1,
            };
        }
        events
    }

    fn tick(&mut self, t_us: u64, transport: &mut dyn Transport) -> Result<(), SessionError> {
        for dg in self.inbox.drain(NodeId::Controller, transport, secs(t_us)) {
            match dg.payload {
                Payload::LeaderState(m) => self.leader = Some(m),
                Payload::FollowerState(m) => self.follower = Some(m),
                _ => {}
            }
        }
        let mut events = Vec::new();
        if let Some(fs) = self.follower {
            let q = JointVector::from(fs.q);
            let points = points_of(&fs);
            let leader = self.leader.unwrap_or_default();
            let je = point_jacobian_unchecked(&q, GraspPoint::Elbow, &self.kin);
            let jw = point_jacobian_unchecked(&q, GraspPoint::Wrist, &self.kin);
            let input = CouplingInput {
                leader_pos: v3(&leader.pos),
                leader_vel: v3(&leader.vel),
                grip_closed: leader.grip_closed,
                points,
                elbow_jacobian: &je,
                wrist_jacobian: &jw,
                qdot: JointVector::from(fs.qdot),
                enabled: self.condition() == Condition::HD,
            };
            let before = self.coupling.grab.engaged();
            let (state, out) = controller_step(&self.coupling, &input, &self.coupling_cfg);
            self.coupling = state;
            self.output = Some(out);
            let after = self.coupling.grab.engaged();
            if before != after {
                if let Some(p) = before {
                    events.push(self.context_event(TaskEventKind::GrabReleased, t_us, Some(p)));
                }
                if let Some(p) = after {
                    events.push(self.context_event(TaskEventKind::GrabEngaged, t_us, Some(p)));
                }
            }
            events.extend(self.advance_flow(t_us, &points));

            let tau = TorqueCmdMsg { tau: out.tau.into() };
            self.outbox
                .send(transport, NodeId::Follower, t_us, Payload::TorqueCmd(tau))?;
            let force = ForceCmdMsg {
                force: out.force_leader.into(),
            };
            self.outbox
                .send(transport, NodeId::Leader, t_us, Payload::ForceCmd(force))?;
            self.outbox
                .send(transport, NodeId::Leader, t_us, Payload::FollowerState(fs))?;
        }
        for ev in &events {
            let msg = self.status(ev.kind, ev.value).to_msg();
            for to in [NodeId::Leader, NodeId::Follower] {
                self.outbox.send(transport, to, t_us, Payload::TaskEvent(msg))?;
            }
        }
        let msg = self.status(TaskEventKind::Status, 0.0).to_msg();
        for to in [NodeId::Leader, NodeId::Follower] {
            self.outbox.send(transport, to, t_us, Payload::TaskEvent(msg))?;
        }
        self.events.extend(events);
        Ok(())
    }
}

pub struct FollowerNode {
    state: FollowerState,
    plant: PlantParams,
    kin: KinematicParams,
    targets: PoseTargets,
    trainee: TraineeModel,
    inbox: Inbox,
    outbox: Outbox,
    tau_c: JointVector,
    status: Option<TaskStatus>,
}

impl FollowerNode {
    fn new(cfg: &SessionConfig, targets: PoseTargets) -> Self {
        Self {
            state: FollowerState::at_rest(targets.get(PoseId::Base).q_target),
            plant: cfg.plant,
            kin: cfg.kinematics,
            targets,
            // separate stream from the schedule generator
            trainee: TraineeModel::new(cfg.trainee, cfg.seed ^ 0x7261_696e_6565),
            inbox: Inbox::new(),
            outbox: Outbox {
                node: NodeId::Follower,
                seq: SeqCounter::default(),
            },
            tau_c: JointVector::zeros(),
            status: None,
        }
    }

    pub fn state(&self) -> &FollowerState {
        &self.state
    }

    fn tick(&mut self, t_us: u64, transport: &mut dyn Transport) -> Result<(), SessionError> {
        for dg in self.inbox.drain(NodeId::Follower, transport, secs(t_us)) {
            match dg.payload {
                Payload::TorqueCmd(m) => self.tau_c = JointVector::from(m.tau),
                Payload::TaskEvent(m) => match TaskStatus::from_msg(&m) {
                    Some(s) => self.status = Some(s),
                    None => self.inbox.stats.malformed += 1,
                },
                _ => {}
            }
        }
        let imitate = self
            .status
            .filter(|s| s.active && s.condition == Condition::VD)
            .and_then(|s| s.pose)
            .map(|p| *self.targets.get(p));
        let tau_v = self.trainee.torque(
            &self.state.q,
            &self.state.qdot,
            imitate.as_ref(),
            t_us,
            &self.kin,
        );
        self.state = plant_step(&self.state, &self.tau_c, &tau_v, &self.plant, &self.kin).map_err(
            |source| SessionError::Plant {
                t_s: secs(t_us),
                source,
            },
        )?;
        let pts = forward_kinematics_unchecked(&self.state.q, &self.kin);
        let msg = FollowerStateMsg {
            q: self.state.q.into(),
            qdot: self.state.qdot.into(),
            elbow: pts.elbow.into(),
            wrist: pts.wrist.into(),
        };
        self.outbox
            .send(transport, NodeId::Controller, t_us, Payload::FollowerState(msg))?;
        Ok(())
    }
}

/// Everything worth logging about one tick, sampled at the tick's start time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickRecord {
    pub t_us: u64,
    pub q: JointVector,
    pub elbow: Vector3<f64>,
    pub wrist: Vector3<f64>,
    pub leader: Vector3<f64>,
    pub mapped: Vector3<f64>,
    pub grab: Grab,
    /// Force rendered on the leader, leader frame.
    pub force_leader: Vector3<f64>,
    /// Force applied at the engaged follower point, follower frame.
    pub force_follower: Vector3<f64>,
    pub tau: JointVector,
    /// 0 between trials.
    pub trial_id: u32,
    pub pose: Option<PoseId>,
    pub phase: &'static str,
    pub condition: Condition,
    pub block: u8,
}

pub const PAUSE_PHASE: &str = "pause";

/// Live view for observers such as the UI bridge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SessionSnapshot {
    pub tick: TickRecord,
    pub grip_closed: bool,
    pub target: Option<crate::task::PoseTarget>,
    pub matched: bool,
    pub hold_remaining: Option<f64>,
    pub familiarization: bool,
    pub done: bool,
}

pub struct Session {
    cfg: SessionConfig,
    transport: Box<dyn Transport + Send>,
    input: Box<dyn LeaderInput>,
    leader: LeaderNode,
    controller: ControllerNode,
    follower: FollowerNode,
    t_us: u64,
    dt_us: u64,
    last: Option<TickRecord>,
}

impl Session {
    pub fn new(
        cfg: SessionConfig,
        transport: Box<dyn Transport + Send>,
        input: Box<dyn LeaderInput>,
    ) -> Result<Self, SessionError> {
        cfg.validate()?;
        let dt_us = to_micros_exact(cfg.plant.dt).expect("validated");
        let targets = cfg
            .poses
            .targets(&cfg.kinematics)
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(Self {
            leader: LeaderNode::new(&cfg, targets.clone(), cfg.plant.dt),
            controller: ControllerNode::new(&cfg, targets.clone()),
            follower: FollowerNode::new(&cfg, targets),
            cfg,
            transport,
            input,
            t_us: 0,
            dt_us,
            last: None,
        })
    }

    /// Session with the transport named in the config and the scripted trainer.
    pub fn scripted(cfg: SessionConfig) -> Result<Self, SessionError> {
        let transport = make_transport(&cfg)?;
        let input = Box::new(ScriptedTrainer::new(cfg.trainer, cfg.coupling.map));
        Self::new(cfg, transport, input)
    }

    pub fn config(&self) -> &SessionConfig {
        &self.cfg
    }

    pub fn time_us(&self) -> u64 {
        self.t_us
    }

    pub fn is_done(&self) -> bool {
        self.controller.is_done()
    }

    pub fn controller(&self) -> &ControllerNode {
        &self.controller
    }

    pub fn leader(&self) -> &LeaderNode {
        &self.leader
    }

    pub fn follower(&self) -> &FollowerNode {
        &self.follower
    }

    pub fn transport_stats(&self) -> TransportStats {
        self.transport.stats()
    }

    pub fn node_stats(&self) -> [NodeStats; 3] {
        [
            self.leader.inbox.stats,
            self.controller.inbox.stats,
            self.follower.inbox.stats,
        ]
    }

    /// Replaces the leader input, e.g. when a UI operator takes over.
    pub fn set_input(&mut self, input: Box<dyn LeaderInput>) {
        self.input = input;
    }

    /// Abandons the running trial (or its return leg) at the next tick.
    pub fn skip_trial(&mut self) {
        self.controller.skip_requested = true;
    }

    /// Runs one plant tick and returns the record sampled at its start.
    pub fn step(&mut self) -> Result<TickRecord, SessionError> {
        let limit = self.cfg.timing.max_session_s;
        if self.t_us > to_us(limit) {
            return Err(SessionError::Overrun { limit_s: limit });
        }
        let t = self.t_us;
        let q = self.follower.state.q;
        let pts = forward_kinematics_unchecked(&q, &self.cfg.kinematics);
        let leader = self.leader.state.pos;

        let transport = self.transport.as_mut();
        self.leader.tick(t, self.input.as_mut(), transport)?;
        self.controller.tick(t, transport)?;
        self.follower.tick(t, transport)?;

        let c = &self.controller;
        let out = c.output.unwrap_or(CouplingOutput {
            x_mapped: map_leader_to_follower(&leader, &self.cfg.coupling.map),
            force_leader: Vector3::zeros(),
            force_follower: Vector3::zeros(),
            tau: JointVector::zeros(),
        });
        let (trial_id, pose, phase) = match c.trial() {
            Some(tr) => (tr.spec.trial_id, Some(tr.spec.pose), tr.phase.label()),
            None => (0, None, PAUSE_PHASE),
        };
        let ctx = c.context();
        let rec = TickRecord {
            t_us: t,
            q,
            elbow: pts.elbow,
            wrist: pts.wrist,
            leader,
            mapped: map_leader_to_follower(&leader, &self.cfg.coupling.map),
            grab: c.grab(),
            force_leader: out.force_leader,
            force_follower: out.force_follower,
            tau: out.tau,
            trial_id,
            pose,
            phase,
            condition: ctx.map_or(Condition::HD, |t| t.condition),
            block: ctx.map_or(0, |t| t.block),
        };
        self.t_us += self.dt_us;
        self.last = Some(rec);
        Ok(rec)
    }

    pub fn snapshot(&self) -> Option<SessionSnapshot> {
        let tick = self.last?;
        let c = &self.controller;
        let status = c.status(TaskEventKind::Status, 0.0);
        let trial = c.trial();
        Some(SessionSnapshot {
            tick,
            grip_closed: self.leader.state.grip_closed,
            target: trial.map(|t| *t.active_target()),
            matched: status.matched,
            hold_remaining: trial.and_then(|t| t.hold_remaining(tick.t_us, &self.cfg.task)),
            familiarization: status.familiarization,
            done: status.done,
        })
    }

    /// Trial records and events gathered so far.
    pub fn outcome(&self) -> (Vec<TrialRecord>, Vec<TaskEvent>) {
        (
            self.controller.records.clone(),
            self.controller.events.clone(),
        )
    }
}

pub fn make_transport(cfg: &SessionConfig) -> Result<Box<dyn Transport + Send>, SessionError> {
    Ok(match cfg.transport {
        TransportKind::Loopback => {
            let mut model = cfg.link;
            // per-session link noise unless the config pins it
            model.seed = model.seed.wrapping_add(cfg.seed.rotate_left(32));
            Box::new(LoopbackTransport::new(model))
        }
        TransportKind::Udp => Box::new(UdpTransport::bind(&cfg.udp)?),
    })
}
