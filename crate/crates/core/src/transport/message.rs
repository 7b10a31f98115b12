//! Payload codecs for every frame kind. All integers little-endian, floats
//! IEEE-754 binary64.

use crate::rl::Transition;

use super::frame::{decode_frame, encode_frame, Frame, FrameKind};
use super::TransportError;

/// Error codes carried by `ERR` frames.
pub mod err_code {
    /// Malformed or inapplicable request.
    pub const PROTOCOL: u32 = 1;
    /// Resource not ready (for example, sampling an empty store).
    pub const NOT_READY: u32 = 2;
    /// A required shard or service is unavailable.
    pub const UNAVAILABLE: u32 = 3;
}

/// One shard's worth of values inside a gradient push or a parameter fetch.
#[derive(Debug, Clone, PartialEq)]
pub struct ShardSlice {
    pub shard_id: u32,
    pub values: Vec<f64>,
}

/// Shard selector for parameter fetches. `n_bits == 0` selects every shard.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardBitmap {
    n_bits: u32,
    bits: Vec<u8>,
}

impl ShardBitmap {
    /// Select all shards, whatever the server's shard count.
    pub fn all() -> Self {
        ShardBitmap {
            n_bits: 0,
            bits: Vec::new(),
        }
    }

    pub fn from_ids(n_shards: u32, ids: &[u32]) -> Self {
        let mut bits = vec![0u8; n_shards.div_ceil(8) as usize];
        for &id in ids {
            if id < n_shards {
                bits[(id / 8) as usize] |= 1 << (id % 8);
            }
        }
        ShardBitmap {
            n_bits: n_shards,
            bits,
        }
    }

    pub fn is_all(&self) -> bool {
        self.n_bits == 0
    }

    pub fn contains(&self, id: u32) -> bool {
        if self.is_all() {
            return true;
        }
        if id >= self.n_bits {
            return false;
        }
        self.bits[(id / 8) as usize] & (1 << (id % 8)) != 0
    }

    /// Shard ids selected out of a server with `n_shards` shards.
    pub fn selected(&self, n_shards: u32) -> Vec<u32> {
        (0..n_shards).filter(|&i| self.contains(i)).collect()
    }

    /// Every bit set in the bitmap, whether or not the server has that shard.
    pub fn set_ids(&self) -> Vec<u32> {
        (0..self.n_bits).filter(|&i| self.contains(i)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerStats {
    pub applied: u64,
    pub discarded_stale: u64,
    pub version: u64,
    pub per_shard_apply_counts: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayStats {
    pub shard_sizes: Vec<u64>,
    pub puts: u64,
    pub evictions: u64,
}

/// Stats payloads are tagged with the reporting service.
#[derive(Debug, Clone, PartialEq)]
pub enum StatsBody {
    ParamServer(ServerStats),
    ReplayStore(ReplayStats),
}

/// Payload of an `ACK`, tagged by what is being acknowledged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AckBody {
    GradAccepted { new_version: u64 },
    GradDiscardedStale { current_version: u64 },
    ExpStored { shard_id: u32, shard_size: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrBody {
    pub code: u32,
    pub detail: String,
}

/// Application-level messages; each maps onto exactly one frame kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    GradPush {
        base_version: u64,
        slices: Vec<ShardSlice>,
    },
    ParamFetchReq {
        shards: ShardBitmap,
    },
    ParamFetchResp {
        version: u64,
        slices: Vec<ShardSlice>,
    },
    PutExp(Transition),
    SampleReq {
        batch: u32,
    },
    SampleResp {
        transitions: Vec<Transition>,
    },
    StatsReq,
    StatsResp(StatsBody),
    Ack(AckBody),
    Err(ErrBody),
}

impl Message {
    pub fn kind(&self) -> FrameKind {
        match self {
            Message::GradPush { .. } => FrameKind::GradPush,
            Message::ParamFetchReq { .. } => FrameKind::ParamFetchReq,
            Message::ParamFetchResp { .. } => FrameKind::ParamFetchResp,
            Message::PutExp(_) => FrameKind::PutExp,
            Message::SampleReq { .. } => FrameKind::SampleReq,
            Message::SampleResp { .. } => FrameKind::SampleResp,
            Message::StatsReq => FrameKind::StatsReq,
            Message::StatsResp(_) => FrameKind::StatsResp,
            Message::Ack(_) => FrameKind::Ack,
            Message::Err(_) => FrameKind::Err,
        }
    }

    /// Encode into a complete frame (header + payload + crc).
    pub fn encode(&self) -> Result<Vec<u8>, TransportError> {
        encode_frame(self.kind(), &self.payload())
    }

    /// Decode one message from the front of `buf`.
    pub fn decode(buf: &[u8]) -> Result<(Message, usize), TransportError> {
        let (frame, consumed) = decode_frame(buf)?;
        Ok((Message::from_frame(&frame)?, consumed))
    }

    pub fn from_frame(frame: &Frame) -> Result<Message, TransportError> {
        let mut r = Reader::new(frame.kind, &frame.payload);
        let msg = match frame.kind {
            FrameKind::GradPush => {
                let base_version = r.u64()?;
                let slices = r.shard_slices()?;
                Message::GradPush {
                    base_version,
                    slices,
                }
            }
            FrameKind::ParamFetchReq => {
                let n_bits = r.u32()?;
                let bits = r.bytes(n_bits.div_ceil(8) as usize)?;
                Message::ParamFetchReq {
                    shards: ShardBitmap { n_bits, bits },
                }
            }
            FrameKind::ParamFetchResp => {
                let version = r.u64()?;
                let slices = r.shard_slices()?;
                Message::ParamFetchResp { version, slices }
            }
            FrameKind::PutExp => Message::PutExp(r.transition()?),
            FrameKind::SampleReq => Message::SampleReq { batch: r.u32()? },
            FrameKind::SampleResp => {
                let count = r.u32()? as usize;
                if count > frame.payload.len() {
                    return Err(r.malformed("transition count exceeds payload"));
                }
                let mut transitions = Vec::with_capacity(count);
                for _ in 0..count {
                    transitions.push(r.transition()?);
                }
                Message::SampleResp { transitions }
            }
            FrameKind::StatsReq => Message::StatsReq,
            FrameKind::StatsResp => {
                let service = r.u8()?;
                match service {
                    0 => {
                        let applied = r.u64()?;
                        let discarded_stale = r.u64()?;
                        let version = r.u64()?;
                        let n = r.u32()? as usize;
                        if n * 8 > r.remaining() {
                            return Err(r.malformed("per-shard count exceeds payload"));
                        }
                        let mut per_shard_apply_counts = Vec::with_capacity(n);
                        for _ in 0..n {
                            per_shard_apply_counts.push(r.u64()?);
                        }
                        Message::StatsResp(StatsBody::ParamServer(ServerStats {
                            applied,
                            discarded_stale,
                            version,
                            per_shard_apply_counts,
                        }))
                    }
                    1 => {
                        let n = r.u32()? as usize;
                        if n * 8 > r.remaining() {
                            return Err(r.malformed("shard size count exceeds payload"));
                        }
                        let mut shard_sizes = Vec::with_capacity(n);
                        for _ in 0..n {
                            shard_sizes.push(r.u64()?);
                        }
                        let puts = r.u64()?;
                        let evictions = r.u64()?;
                        Message::StatsResp(StatsBody::ReplayStore(ReplayStats {
                            shard_sizes,
                            puts,
                            evictions,
                        }))
                    }
                    other => {
                        return Err(r.malformed(format!("unknown stats service {other}")))
                    }
                }
            }
            FrameKind::Ack => {
                let op = r.u8()?;
                match op {
                    1 => Message::Ack(AckBody::GradAccepted {
                        new_version: r.u64()?,
                    }),
                    2 => Message::Ack(AckBody::GradDiscardedStale {
                        current_version: r.u64()?,
                    }),
                    3 => Message::Ack(AckBody::ExpStored {
                        shard_id: r.u32()?,
                        shard_size: r.u64()?,
                    }),
                    other => return Err(r.malformed(format!("unknown ack op {other}"))),
                }
            }
            FrameKind::Err => {
                let code = r.u32()?;
                let len = r.u32()? as usize;
                let bytes = r.bytes(len)?;
                let detail = String::from_utf8(bytes)
                    .map_err(|_| r.malformed("error detail is not utf-8"))?;
                Message::Err(ErrBody { code, detail })
            }
        };
        if r.remaining() != 0 {
            return Err(r.malformed(format!("{} trailing bytes", r.remaining())));
        }
        Ok(msg)
    }

    fn payload(&self) -> Vec<u8> {
        let mut w = Vec::new();
        match self {
            Message::GradPush {
                base_version,
                slices,
            } => {
                w.extend_from_slice(&base_version.to_le_bytes());
                write_shard_slices(&mut w, slices);
            }
            Message::ParamFetchReq { shards } => {
                w.extend_from_slice(&shards.n_bits.to_le_bytes());
                w.extend_from_slice(&shards.bits);
            }
            Message::ParamFetchResp { version, slices } => {
                w.extend_from_slice(&version.to_le_bytes());
                write_shard_slices(&mut w, slices);
            }
            Message::PutExp(t) => write_transition(&mut w, t),
            Message::SampleReq { batch } => w.extend_from_slice(&batch.to_le_bytes()),
            Message::SampleResp { transitions } => {
                w.extend_from_slice(&(transitions.len() as u32).to_le_bytes());
                for t in transitions {
                    write_transition(&mut w, t);
                }
            }
            Message::StatsReq => {}
            Message::StatsResp(StatsBody::ParamServer(s)) => {
                w.push(0);
                w.extend_from_slice(&s.applied.to_le_bytes());
                w.extend_from_slice(&s.discarded_stale.to_le_bytes());
                w.extend_from_slice(&s.version.to_le_bytes());
                w.extend_from_slice(&(s.per_shard_apply_counts.len() as u32).to_le_bytes());
                for c in &s.per_shard_apply_counts {
                    w.extend_from_slice(&c.to_le_bytes());
                }
            }
            Message::StatsResp(StatsBody::ReplayStore(s)) => {
                w.push(1);
                w.extend_from_slice(&(s.shard_sizes.len() as u32).to_le_bytes());
                for c in &s.shard_sizes {
                    w.extend_from_slice(&c.to_le_bytes());
                }
                w.extend_from_slice(&s.puts.to_le_bytes());
                w.extend_from_slice(&s.evictions.to_le_bytes());
            }
            Message::Ack(body) => match body {
                AckBody::GradAccepted { new_version } => {
                    w.push(1);
                    w.extend_from_slice(&new_version.to_le_bytes());
                }
                AckBody::GradDiscardedStale { current_version } => {
                    w.push(2);
                    w.extend_from_slice(&current_version.to_le_bytes());
                }
                AckBody::ExpStored {
                    shard_id,
                    shard_size,
                } => {
                    w.push(3);
                    w.extend_from_slice(&shard_id.to_le_bytes());
                    w.extend_from_slice(&shard_size.to_le_bytes());
                }
            },
            Message::Err(e) => {
                w.extend_from_slice(&e.code.to_le_bytes());
                w.extend_from_slice(&(e.detail.len() as u32).to_le_bytes());
                w.extend_from_slice(e.detail.as_bytes());
            }
        }
        w
    }
}

fn write_shard_slices(w: &mut Vec<u8>, slices: &[ShardSlice]) {
    w.extend_from_slice(&(slices.len() as u32).to_le_bytes());
    for s in slices {
        w.extend_from_slice(&s.shard_id.to_le_bytes());
        w.extend_from_slice(&(s.values.len() as u64).to_le_bytes());
        for v in &s.values {
            w.extend_from_slice(&v.to_le_bytes());
        }
    }
}

fn write_transition(w: &mut Vec<u8>, t: &Transition) {
    w.extend_from_slice(&t.actor_id.to_le_bytes());
    w.extend_from_slice(&t.step.to_le_bytes());
    w.extend_from_slice(&(t.action as u32).to_le_bytes());
    w.extend_from_slice(&t.reward.to_le_bytes());
    w.push(t.terminal as u8);
    w.extend_from_slice(&(t.state.len() as u32).to_le_bytes());
    for v in &t.state {
        w.extend_from_slice(&v.to_le_bytes());
    }
    for v in &t.next_state {
        w.extend_from_slice(&v.to_le_bytes());
    }
}

/// Bounds-checked little-endian reader over a payload slice.
struct Reader<'a> {
    kind: FrameKind,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(kind: FrameKind, buf: &'a [u8]) -> Self {
        Reader { kind, buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn malformed(&self, reason: impl Into<String>) -> TransportError {
        TransportError::MalformedPayload {
            kind: self.kind,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], TransportError> {
        if self.remaining() < n {
            return Err(TransportError::Truncated);
        }
        let slice = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, TransportError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, TransportError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, TransportError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, TransportError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn bytes(&mut self, n: usize) -> Result<Vec<u8>, TransportError> {
        Ok(self.take(n)?.to_vec())
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>, TransportError> {
        if n.checked_mul(8).is_none_or(|b| b > self.remaining()) {
            return Err(TransportError::Truncated);
        }
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    fn shard_slices(&mut self) -> Result<Vec<ShardSlice>, TransportError> {
        let n = self.u32()? as usize;
        if n * 12 > self.remaining() {
            return Err(self.malformed("slice count exceeds payload"));
        }
        let mut slices = Vec::with_capacity(n);
        for _ in 0..n {
            let shard_id = self.u32()?;
            let len = self.u64()?;
            let len = usize::try_from(len).map_err(|_| self.malformed("slice length"))?;
            slices.push(ShardSlice {
                shard_id,
                values: self.f64_vec(len)?,
            });
        }
        Ok(slices)
    }

    fn transition(&mut self) -> Result<Transition, TransportError> {
        let actor_id = self.u32()?;
        let step = self.u64()?;
        let action = self.u32()? as usize;
        let reward = self.f64()?;
        let terminal = match self.u8()? {
            0 => false,
            1 => true,
            other => return Err(self.malformed(format!("terminal flag {other}"))),
        };
        let dim = self.u32()? as usize;
        let state = self.f64_vec(dim)?;
        let next_state = self.f64_vec(dim)?;
        Ok(Transition {
            state,
            action,
            reward,
            next_state,
            terminal,
            actor_id,
            step,
        })
    }
}
