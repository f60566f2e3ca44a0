//! Fixed-layout little-endian datagram codec.
//!
//! Every datagram starts with a 16 byte header:
//!
//! ```text
//! offset size field
//! 0      2    magic   0x48 0x4C ("HL")
//! 2      1    version 1
//! 3      1    type    1..=5
//! 4      4    seq     u32 LE
//! 8      8    t_us    u64 LE
//! ```
//!
//! followed by a payload whose size is fixed by the type:
//!
//! | type | message     | payload                                              | total |
//! |------|-------------|------------------------------------------------------|-------|
//! | 1    | LeaderState | pos 3×f64, vel 3×f64, grip u8, 7 zero bytes          | 72    |
//! | 2    | FollowerState | q 6×f64, qdot 6×f64, elbow 3×f64, wrist 3×f64      | 160   |
//! | 3    | ForceCmd    | force 3×f64                                          | 40    |
//! | 4    | TorqueCmd   | tau 6×f64                                            | 64    |
//! | 5    | TaskEvent   | kind, phase, pose, condition, block, grab, flags u8; 1 zero byte; trial_id u32; 4 zero bytes; value f64 | 40 |

use std::fmt;

use thiserror::Error;

pub const MAGIC: [u8; 2] = [0x48, 0x4C];
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MsgType {
    LeaderState = 1,
    FollowerState = 2,
    ForceCmd = 3,
    TorqueCmd = 4,
    TaskEvent = 5,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => MsgType::LeaderState,
            2 => MsgType::FollowerState,
            3 => MsgType::ForceCmd,
            4 => MsgType::TorqueCmd,
            5 => MsgType::TaskEvent,
            _ => return None,
        })
    }

    pub fn payload_len(self) -> usize {
        match self {
            MsgType::LeaderState => 56,
            MsgType::FollowerState => 144,
            MsgType::ForceCmd => 24,
            MsgType::TorqueCmd => 48,
            MsgType::TaskEvent => 24,
        }
    }

    pub fn wire_len(self) -> usize {
        HEADER_LEN + self.payload_len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LeaderStateMsg {
    pub pos: [f64; 3],
    pub vel: [f64; 3],
    pub grip_closed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FollowerStateMsg {
    pub q: [f64; 6],
    pub qdot: [f64; 6],
    pub elbow: [f64; 3],
    pub wrist: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ForceCmdMsg {
    pub force: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TorqueCmdMsg {
    pub tau: [f64; 6],
}

/// Task status broadcast. The byte-coded fields are interpreted by the task
/// engine; the codec only moves them.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TaskEventMsg {
    pub kind: u8,
    pub phase: u8,
    pub pose: u8,
    pub condition: u8,
    pub block: u8,
    pub grab: u8,
    pub flags: u8,
    pub trial_id: u32,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Payload {
    LeaderState(LeaderStateMsg),
    FollowerState(FollowerStateMsg),
    ForceCmd(ForceCmdMsg),
    TorqueCmd(TorqueCmdMsg),
    TaskEvent(TaskEventMsg),
}

impl Payload {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Payload::LeaderState(_) => MsgType::LeaderState,
            Payload::FollowerState(_) => MsgType::FollowerState,
            Payload::ForceCmd(_) => MsgType::ForceCmd,
            Payload::TorqueCmd(_) => MsgType::TorqueCmd,
            Payload::TaskEvent(_) => MsgType::TaskEvent,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Datagram {
    pub seq: u32,
    pub t_us: u64,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MalformedReason {
    TooShort { len: usize },
    BadMagic,
    UnsupportedVersion(u8),
    UnknownType(u8),
    LengthMismatch { expected: usize, got: usize },
    InvalidField(&'static str),
}

impl fmt::Display for MalformedReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MalformedReason::TooShort { len } => write!(f, "too_short ({len} bytes)"),
            MalformedReason::BadMagic => write!(f, "bad_magic"),
            MalformedReason::UnsupportedVersion(v) => write!(f, "unsupported_version {v}"),
            MalformedReason::UnknownType(t) => write!(f, "unknown_type {t}"),
            MalformedReason::LengthMismatch { expected, got } => {
                write!(f, "length_mismatch (expected {expected}, got {got})")
            }
            MalformedReason::InvalidField(name) => write!(f, "invalid_field {name}"),
        }
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("malformed datagram: {reason}")]
pub struct MalformedDatagram {
    pub reason: MalformedReason,
}

impl From<MalformedReason> for MalformedDatagram {
    fn from(reason: MalformedReason) -> Self {
        Self { reason }
    }
}

fn put_f64s(buf: &mut Vec<u8>, vals: &[f64]) {
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(msg: &Datagram) -> Vec<u8> {
    let ty = msg.payload.msg_type();
    let mut buf = Vec::with_capacity(ty.wire_len());
    buf.extend_from_slice(&MAGIC);
    buf.push(VERSION);
    buf.push(ty as u8);
    buf.extend_from_slice(&msg.seq.to_le_bytes());
    buf.extend_from_slice(&msg.t_us.to_le_bytes());
    match &msg.payload {
        Payload::LeaderState(m) => {
            put_f64s(&mut buf, &m.pos);
            put_f64s(&mut buf, &m.vel);
            buf.push(m.grip_closed as u8);
            buf.extend_from_slice(&[0u8; 7]);
        }
        Payload::FollowerState(m) => {
            put_f64s(&mut buf, &m.q);
            put_f64s(&mut buf, &m.qdot);
            put_f64s(&mut buf, &m.elbow);
            put_f64s(&mut buf, &m.wrist);
        }
        Payload::ForceCmd(m) => put_f64s(&mut buf, &m.force),
        Payload::TorqueCmd(m) => put_f64s(&mut buf, &m.tau),
        Payload::TaskEvent(m) => {
            buf.extend_from_slice(&[
                m.kind,
                m.phase,
                m.pose,
                m.condition,
                m.block,
                m.grab,
                m.flags,
                0,
            ]);
            buf.extend_from_slice(&m.trial_id.to_le_bytes());
            buf.extend_from_slice(&[0u8; 4]);
            buf.extend_from_slice(&m.value.to_le_bytes());
        }
    }
    debug_assert_eq!(buf.len(), ty.wire_len());
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn bytes<const N: usize>(&mut self) -> [u8; N] {
        let mut out = [0u8; N];
        out.copy_from_slice(&self.buf[self.pos..self.pos + N]);
        self.pos += N;
        out
    }

    fn u8(&mut self) -> u8 {
        self.bytes::<1>()[0]
    }

    fn f64s<const N: usize>(&mut self) -> [f64; N] {
        let mut out = [0.0; N];
        for v in out.iter_mut() {
            *v = f64::from_le_bytes(self.bytes::<8>());
        }
        out
    }

    fn zeros(&mut self, n: usize, field: &'static str) -> Result<(), MalformedReason> {
        let pad = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        if pad.iter().all(|b| *b == 0) {
            Ok(())
        } else {
            Err(MalformedReason::InvalidField(field))
        }
    }
}

pub fn decode(bytes: &[u8]) -> Result<Datagram, MalformedDatagram> {
    if bytes.len() < HEADER_LEN {
        return Err(MalformedReason::TooShort { len: bytes.len() }.into());
    }
    if bytes[0..2] != MAGIC {
        return Err(MalformedReason::BadMagic.into());
    }
    if bytes[2] != VERSION {
        return Err(MalformedReason::UnsupportedVersion(bytes[2]).into());
    }
    let ty = MsgType::from_u8(bytes[3]).ok_or(MalformedReason::UnknownType(bytes[3]))?;
    if bytes.len() != ty.wire_len() {
        return Err(MalformedReason::LengthMismatch {
            expected: ty.wire_len(),
            got: bytes.len(),
        }
        .into());
    }
    let mut r = Reader { buf: bytes, pos: 4 };
    let seq = u32::from_le_bytes(r.bytes::<4>());
    let t_us = u64::from_le_bytes(r.bytes::<8>());
    let payload = match ty {
        MsgType::LeaderState => {
            let pos = r.f64s::<3>();
            let vel = r.f64s::<3>();
            let grip_closed = match r.u8() {
                0 => false,
                1 => true,
                _ => return Err(MalformedReason::InvalidField("grip").into()),
            };
            r.zeros(7, "padding")?;
            Payload::LeaderState(LeaderStateMsg {
                pos,
                vel,
                grip_closed,
            })
        }
        MsgType::FollowerState => Payload::FollowerState(FollowerStateMsg {
            q: r.f64s(),
            qdot: r.f64s(),
            elbow: r.f64s(),
            wrist: r.f64s(),
        }),
        MsgType::ForceCmd => Payload::ForceCmd(ForceCmdMsg { force: r.f64s() }),
        MsgType::TorqueCmd => Payload::TorqueCmd(TorqueCmdMsg { tau: r.f64s() }),
        MsgType::TaskEvent => {
            let [kind, phase, pose, condition, block, grab, flags] = r.bytes::<7>();
            r.zeros(1, "padding")?;
            let trial_id = u32::from_le_bytes(r.bytes::<4>());
            r.zeros(4, "padding")?;
            let value = r.f64s::<1>()[0];
            Payload::TaskEvent(TaskEventMsg {
                kind,
                phase,
                pose,
                condition,
                block,
                grab,
                flags,
                trial_id,
                value,
            })
        }
    };
    Ok(Datagram { seq, t_us, payload })
}
