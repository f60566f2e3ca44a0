//! Datagram transports between the three nodes.
//!
//! [`LoopbackTransport`] is single-threaded and fully deterministic: every
//! directed link is an [`ImpairedLink`] with its own seeded generator.
//! [`UdpTransport`] binds one socket per node; a background thread per socket
//! only appends to a bounded queue that the owning node drains.

use std::collections::VecDeque;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::link::{ImpairedLink, LinkModel, LinkStats};
use super::NodeId;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("transport startup failed: {0}")]
    Startup(String),
    #[error("send on {from:?}->{to:?} failed: {source}")]
    Send {
        from: NodeId,
        to: NodeId,
        source: std::io::Error,
    },
    #[error("no link from {0:?} to {1:?}")]
    NoLink(NodeId, NodeId),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TransportStats {
    pub sent: u64,
    pub dropped: u64,
    pub delivered: u64,
    /// Datagrams discarded because a receive queue was full.
    pub overflow: u64,
}

pub trait Transport {
    fn send(&mut self, from: NodeId, to: NodeId, bytes: &[u8], now: f64) -> Result<(), TransportError>;
    /// Everything deliverable to `node` at `now`, as (sender, bytes).
    fn recv(&mut self, node: NodeId, now: f64) -> Vec<(NodeId, Vec<u8>)>;
    fn stats(&self) -> TransportStats;
}

/// The four directed links of the star topology around the controller.
pub const LINKS: [(NodeId, NodeId); 4] = [
    (NodeId::Leader, NodeId::Controller),
    (NodeId::Controller, NodeId::Leader),
    (NodeId::Controller, NodeId::Follower),
    (NodeId::Follower, NodeId::Controller),
];

pub struct LoopbackTransport {
    links: Vec<((NodeId, NodeId), ImpairedLink<Vec<u8>>)>,
}

impl LoopbackTransport {
    /// Every link uses `model`; link `i` seeds its generator with `model.seed + i`.
    pub fn new(model: LinkModel) -> Self {
        let links = LINKS
            .iter()
            .enumerate()
            .map(|(i, &pair)| {
                let m = LinkModel {
                    seed: model.seed.wrapping_add(i as u64),
                    ..model
                };
                (pair, ImpairedLink::new(m))
            })
            .collect();
        Self { links }
    }

    pub fn ideal() -> Self {
        Self::new(LinkModel::default())
    }
}

impl Transport for LoopbackTransport {
    fn send(&mut self, from: NodeId, to: NodeId, bytes: &[u8], now: f64) -> Result<(), TransportError> {
        let link = self
            .links
            .iter_mut()
            .find(|(pair, _)| *pair == (from, to))
            .ok_or(TransportError::NoLink(from, to))?;
        link.1.send(bytes.to_vec(), now);
        Ok(())
    }

    fn recv(&mut self, node: NodeId, now: f64) -> Vec<(NodeId, Vec<u8>)> {
        let mut due: Vec<(f64, NodeId, Vec<u8>)> = Vec::new();
        for ((from, to), link) in self.links.iter_mut() {
            if *to == node {
                due.extend(link.poll(now).into_iter().map(|(t, b)| (t, *from, b)));
            }
        }
        // stable: ties keep link order, which is fixed
        due.sort_by(|a, b| a.0.total_cmp(&b.0));
        due.into_iter().map(|(_, from, b)| (from, b)).collect()
    }

    fn stats(&self) -> TransportStats {
        let mut s = TransportStats::default();
        for (_, link) in &self.links {
            let LinkStats {
                sent,
                dropped,
                delivered,
            } = link.stats();
            s.sent += sent;
            s.dropped += dropped;
            s.delivered += delivered;
        }
        s
    }
}

/// Bounded single-consumer queue with drop-oldest overflow.
pub struct BoundedQueue<T> {
    inner: Mutex<QueueInner<T>>,
    ready: Condvar,
    capacity: usize,
}

struct QueueInner<T> {
    items: VecDeque<T>,
    pushed: u64,
    overflow: u64,
}

impl<T> BoundedQueue<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            inner: Mutex::new(QueueInner {
                items: VecDeque::with_capacity(capacity),
                pushed: 0,
                overflow: 0,
            }),
            ready: Condvar::new(),
            capacity: capacity.max(1),
        }
    }

    pub fn push(&self, item: T) {
        let mut g = self.inner.lock().expect("queue poisoned");
        if g.items.len() == self.capacity {
            g.items.pop_front();
            g.overflow += 1;
        }
        g.items.push_back(item);
        g.pushed += 1;
        self.ready.notify_all();
    }

    pub fn drain(&self) -> Vec<T> {
        self.inner.lock().expect("queue poisoned").items.drain(..).collect()
    }

    /// Blocks until at least `count` items have ever been pushed, or until
    /// `timeout` elapses.
    pub fn wait_pushed(&self, count: u64, timeout: Duration) {
        let deadline = Instant::now() + timeout;
        let mut g = self.inner.lock().expect("queue poisoned");
        while g.pushed < count {
            let now = Instant::now();
            if now >= deadline {
                break;
            }
            g = self.ready.wait_timeout(g, deadline - now).expect("queue poisoned").0;
        }
    }

    pub fn pushed(&self) -> u64 {
        self.inner.lock().expect("queue poisoned").pushed
    }

    pub fn overflow(&self) -> u64 {
        self.inner.lock().expect("queue poisoned").overflow
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UdpConfig {
    pub leader: String,
    pub controller: String,
    pub follower: String,
    /// How long a node waits for datagrams sent to it in the same tick, ms.
    pub lockstep_wait_ms: u64,
    pub queue_capacity: usize,
}

impl Default for UdpConfig {
    fn default() -> Self {
        Self {
            leader: "127.0.0.1:47101".into(),
            controller: "127.0.0.1:47102".into(),
            follower: "127.0.0.1:47103".into(),
            lockstep_wait_ms: 20,
            queue_capacity: 256,
        }
    }
}

impl UdpConfig {
    pub fn addr(&self, node: NodeId) -> &str {
        match node {
            NodeId::Leader => &self.leader,
            NodeId::Controller => &self.controller,
            NodeId::Follower => &self.follower,
        }
    }
}

fn resolve(addr: &str) -> Result<SocketAddr, TransportError> {
    addr.to_socket_addrs()
        .map_err(|e| TransportError::Startup(format!("cannot resolve {addr}: {e}")))?
        .next()
        .ok_or_else(|| TransportError::Startup(format!("no address for {addr}")))
}

struct UdpNode {
    socket: Arc<UdpSocket>,
    addr: SocketAddr,
    queue: Arc<BoundedQueue<(NodeId, Vec<u8>)>>,
    expected: u64,
    handle: Option<JoinHandle<()>>,
}

/// Real UDP sockets for all three nodes of one process. Sends go out through
/// the sender's socket; each node's receive thread tags datagrams by source
/// address. `recv` waits briefly for datagrams sent to the node so that a
/// lock-stepped simulation keeps its per-tick exchange over real sockets.
pub struct UdpTransport {
    nodes: Vec<(NodeId, UdpNode)>,
    stop: Arc<AtomicBool>,
    wait: Duration,
    sent: u64,
    delivered: u64,
}

impl UdpTransport {
    pub fn bind(cfg: &UdpConfig) -> Result<Self, TransportError> {
        let stop = Arc::new(AtomicBool::new(false));
        let mut sockets = Vec::new();
        for node in NodeId::ALL {
            let wanted = resolve(cfg.addr(node))?;
            let socket = UdpSocket::bind(wanted)
                .map_err(|e| TransportError::Startup(format!("bind {wanted} for {node:?}: {e}")))?;
            socket
                .set_read_timeout(Some(Duration::from_millis(20)))
                .map_err(|e| TransportError::Startup(e.to_string()))?;
            let addr = socket
                .local_addr()
                .map_err(|e| TransportError::Startup(e.to_string()))?;
            sockets.push((node, Arc::new(socket), addr));
        }
        let peers: Vec<(SocketAddr, NodeId)> = sockets.iter().map(|(n, _, a)| (*a, *n)).collect();
        let mut nodes = Vec::new();
        for (node, socket, addr) in sockets {
            let queue = Arc::new(BoundedQueue::new(cfg.queue_capacity));
            let handle = {
                let socket = Arc::clone(&socket);
                let queue = Arc::clone(&queue);
                let stop = Arc::clone(&stop);
                let peers = peers.clone();
                std::thread::Builder::new()
                    .name(format!("udp-rx-{node:?}"))
                    .spawn(move || {
                        let mut buf = [0u8; 2048];
                        while !stop.load(Ordering::Relaxed) {
                            match socket.recv_from(&mut buf) {
                                Ok((n, src)) => {
                                    if let Some((_, peer)) = peers.iter().find(|(a, _)| *a == src) {
                                        queue.push((*peer, buf[..n].to_vec()));
                                    } else {
                                        log::warn!("datagram from unknown peer {src}");
                                    }
                                }
                                Err(e)
                                    if matches!(
                                        e.kind(),
                                        std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut
                                    ) => {}
                                Err(e) => log::warn!("udp receive on {node:?}: {e}"),
                            }
                        }
                    })
                    .map_err(|e| TransportError::Startup(e.to_string()))?
            };
            nodes.push((
                node,
                UdpNode {
                    socket,
                    addr,
                    queue,
                    expected: 0,
                    handle: Some(handle),
                },
            ));
        }
        Ok(Self {
            nodes,
            stop,
            wait: Duration::from_millis(cfg.lockstep_wait_ms),
            sent: 0,
            delivered: 0,
        })
    }

    pub fn local_addr(&self, node: NodeId) -> SocketAddr {
        self.node(node).addr
    }

    fn node(&self, id: NodeId) -> &UdpNode {
        &self.nodes.iter().find(|(n, _)| *n == id).expect("all nodes bound").1
    }

    fn node_mut(&mut self, id: NodeId) -> &mut UdpNode {
        &mut self.nodes.iter_mut().find(|(n, _)| *n == id).expect("all nodes bound").1
    }
}

impl Transport for UdpTransport {
    fn send(&mut self, from: NodeId, to: NodeId, bytes: &[u8], _now: f64) -> Result<(), TransportError> {
        let dest = self.node(to).addr;
        self.node(from)
            .socket
            .send_to(bytes, dest)
            .map_err(|source| TransportError::Send { from, to, source })?;
        self.node_mut(to).expected += 1;
        self.sent += 1;
        Ok(())
    }

    fn recv(&mut self, node: NodeId, _now: f64) -> Vec<(NodeId, Vec<u8>)> {
        let wait = self.wait;
        let n = self.node(node);
        n.queue.wait_pushed(n.expected, wait);
        let out = n.queue.drain();
        self.delivered += out.len() as u64;
        out
    }

    fn stats(&self) -> TransportStats {
        let overflow = self.nodes.iter().map(|(_, n)| n.queue.overflow()).sum();
        let pushed: u64 = self.nodes.iter().map(|(_, n)| n.queue.pushed()).sum();
        TransportStats {
            sent: self.sent,
            dropped: self.sent.saturating_sub(pushed),
            delivered: self.delivered,
            overflow,
        }
    }
}

impl Drop for UdpTransport {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        for (_, n) in self.nodes.iter_mut() {
            if let Some(h) = n.handle.take() {
                let _ = h.join();
            }
        }
    }
}
