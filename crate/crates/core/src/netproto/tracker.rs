use std::collections::HashMap;

use super::codec::MsgType;
use super::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Acceptance {
    Accept,
    RejectStale,
}

/// Latest-state-wins filter: per (peer, message type) only strictly newer
/// sequence numbers pass. Gaps are fine; nothing is retransmitted.
#[derive(Debug, Default, Clone)]
pub struct SeqTracker {
    last: HashMap<(NodeId, MsgType), u32>,
    rejected: u64,
}

impl SeqTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accept(&mut self, peer: NodeId, ty: MsgType, seq: u32) -> Acceptance {
        match self.last.get(&(peer, ty)) {
            Some(&last) if seq <= last => {
                self.rejected += 1;
                Acceptance::RejectStale
            }
            _ => {
                self.last.insert((peer, ty), seq);
                Acceptance::Accept
            }
        }
    }

    pub fn last_accepted(&self, peer: NodeId, ty: MsgType) -> Option<u32> {
        self.last.get(&(peer, ty)).copied()
    }

    pub fn rejected(&self) -> u64 {
        self.rejected
    }
}
