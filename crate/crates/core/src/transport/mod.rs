//! Message framing and the two interchangeable transports.
//!
//! Every message travels as one frame:
//!
//! ```text
//! magic   4 bytes  "GRL1"
//! kind    u8
//! length  u32 le   payload byte count
//! payload length bytes
//! crc32   u32 le   crc of the payload
//! ```
//!
//! The in-process transport moves encoded frames through queue pairs; the
//! socket transport writes the same bytes to TCP streams. Both deliver
//! messages ordered, reliable and at most once per connection, so
//! application-level traces are identical across them. See `docs/wire.md`
//! for the byte-exact payload layouts.

mod frame;
mod inproc;
mod message;
mod socket;

pub use frame::{decode_frame, encode_frame, read_frame, Frame, FrameKind, MAX_PAYLOAD};
pub use inproc::{inproc_pair, InProcConn};
pub use message::{
    err_code, AckBody, ErrBody, Message, ReplayStats, ServerStats, ShardBitmap, ShardSlice,
    StatsBody,
};
pub use socket::{backoff_delay, connect_with_backoff, BackoffPolicy, TcpConn};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("bad frame magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("crc mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    BadCrc { stored: u32, computed: u32 },
    #[error("truncated frame or payload")]
    Truncated,
    #[error("unknown frame kind {0}")]
    UnknownKind(u8),
    #[error("payload of {0} bytes exceeds the frame limit")]
    TooLarge(usize),
    #[error("malformed {kind:?} payload: {reason}")]
    MalformedPayload { kind: FrameKind, reason: String },
    #[error("connection closed")]
    ConnectionClosed,
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("connect to {addr} failed after {attempts} attempts: {last}")]
    RetriesExhausted {
        addr: String,
        attempts: u32,
        last: String,
    },
}

/// A bidirectional, ordered, reliable message channel.
pub trait Conn: Send {
    fn send(&mut self, msg: &Message) -> Result<(), TransportError>;
    fn recv(&mut self) -> Result<Message, TransportError>;
}
