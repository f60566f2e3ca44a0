//! Hand-over points between connection handlers and the simulation thread.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use nalgebra::Vector3;

use teleguide_core::operators::{OperatorCommand, WorldView};
use teleguide_core::session::LeaderInput;

use crate::protocol::{SessionControl, UiCommand};

#[derive(Debug, Default, Clone, PartialEq)]
struct Pending {
    target: Option<Vector3<f64>>,
    grip: Option<bool>,
    controls: Vec<SessionControl>,
}

/// Latest-command mailbox. Targets and grip are last-writer-wins until the
/// simulation reads them; session controls are kept in order.
#[derive(Debug, Default)]
pub struct CommandMailbox {
    pending: Mutex<Pending>,
}

impl CommandMailbox {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Pending> {
        self.pending.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn apply(&self, cmd: UiCommand) {
        let mut p = self.lock();
        match cmd {
            UiCommand::SetTarget { pos, .. } => p.target = Some(Vector3::from(pos)),
            UiCommand::SetGrip { closed, .. } => p.grip = Some(closed),
            UiCommand::SessionControl { action, .. } => p.controls.push(action),
        }
    }

    /// Latest target and grip written since the previous call.
    pub fn take_operator(&self) -> (Option<Vector3<f64>>, Option<bool>) {
        let mut p = self.lock();
        (p.target.take(), p.grip.take())
    }

    pub fn take_controls(&self) -> Vec<SessionControl> {
        std::mem::take(&mut self.lock().controls)
    }
}

/// Feeds a parsed command to the simulation.
pub fn apply_ui_command(mailbox: &CommandMailbox, cmd: UiCommand) {
    mailbox.apply(cmd);
}

/// Sliding-window limiter: at most `max` events in any `window`.
#[derive(Debug, Clone)]
pub struct RateLimiter {
    max: usize,
    window: Duration,
    stamps: VecDeque<Instant>,
}

impl RateLimiter {
    pub fn per_second(max: u32) -> Self {
        Self {
            max: max as usize,
            window: Duration::from_secs(1),
            stamps: VecDeque::new(),
        }
    }

    pub fn allow(&mut self, now: Instant) -> bool {
        while self
            .stamps
            .front()
            .is_some_and(|t| now.duration_since(*t) >= self.window)
        {
            self.stamps.pop_front();
        }
        if self.stamps.len() >= self.max {
            return false;
        }
        self.stamps.push_back(now);
        true
    }
}

/// Leader input driven by a human through the command mailbox. Until the
/// first target arrives the hand stays where the device is.
pub struct UiLeader {
    mailbox: Arc<CommandMailbox>,
    target: Option<Vector3<f64>>,
    grip: bool,
}

impl UiLeader {
    pub fn new(mailbox: Arc<CommandMailbox>) -> Self {
        Self {
            mailbox,
            target: None,
            grip: false,
        }
    }
}

impl LeaderInput for UiLeader {
    fn command(&mut self, view: &WorldView, _t_us: u64) -> OperatorCommand {
        let (target, grip) = self.mailbox.take_operator();
        if target.is_some() {
            self.target = target;
        }
        if let Some(g) = grip {
            self.grip = g;
        }
        OperatorCommand {
            target: self.target.unwrap_or(view.leader_pos),
            grip: self.grip,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_writer_wins() {
        let m = CommandMailbox::new();
        m.apply(UiCommand::SetTarget { v: 1, pos: [0.01, 0.0, 0.0] });
        m.apply(UiCommand::SetTarget { v: 1, pos: [0.02, 0.0, 0.0] });
        m.apply(UiCommand::SetGrip { v: 1, closed: true });
        m.apply(UiCommand::SessionControl {
            v: 1,
            action: SessionControl::Start,
        });
        m.apply(UiCommand::SessionControl {
            v: 1,
            action: SessionControl::NextTrial,
        });
        let (t, g) = m.take_operator();
        assert_eq!(t, Some(Vector3::new(0.02, 0.0, 0.0)));
        assert_eq!(g, Some(true));
        assert_eq!(m.take_operator(), (None, None));
        assert_eq!(
            m.take_controls(),
            vec![SessionControl::Start, SessionControl::NextTrial]
        );
        assert!(m.take_controls().is_empty());
    }

    #[test]
    fn limiter_drops_beyond_rate() {
        let mut l = RateLimiter::per_second(200);
        let t0 = Instant::now();
        let accepted = (0..300)
            .filter(|i| l.allow(t0 + Duration::from_micros(i * 100)))
            .count();
        assert_eq!(accepted, 200);
        assert!(l.allow(t0 + Duration::from_millis(1001)));
    }
}
