//! Node-to-node messaging: the binary datagram format, a seeded link
//! impairment model, freshest-state sequence filtering and transports.

pub mod codec;
pub mod link;
pub mod tracker;
pub mod transport;

use serde::{Deserialize, Serialize};

pub use codec::{
    decode, encode, Datagram, ForceCmdMsg, FollowerStateMsg, LeaderStateMsg, MalformedDatagram,
    MalformedReason, MsgType, Payload, TaskEventMsg, TorqueCmdMsg,
};
pub use link::{ImpairedLink, LinkModel, LinkStats};
pub use tracker::{Acceptance, SeqTracker};
pub use transport::{
    LoopbackTransport, Transport, TransportError, TransportStats, UdpConfig, UdpTransport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeId {
    Leader,
    Controller,
    Follower,
}

impl NodeId {
    pub const ALL: [NodeId; 3] = [NodeId::Leader, NodeId::Controller, NodeId::Follower];
}

/// Per-node sender state: one monotonically increasing sequence per message type.
#[derive(Debug, Default, Clone)]
pub struct SeqCounter {
    next: [u32; 5],
}

impl SeqCounter {
    pub fn next(&mut self, ty: MsgType) -> u32 {
        let slot = &mut self.next[ty as usize - 1];
        *slot = slot.wrapping_add(1);
        *slot
    }
}
