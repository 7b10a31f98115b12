use std::io::Read;

use super::TransportError;

pub const FRAME_MAGIC: [u8; 4] = *b"GRL1";
/// Largest accepted payload, in bytes.
pub const MAX_PAYLOAD: usize = 64 << 20;
/// magic + kind + length.
const HEADER_LEN: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FrameKind {
    GradPush = 1,
    ParamFetchReq = 2,
    ParamFetchResp = 3,
    PutExp = 4,
    SampleReq = 5,
    SampleResp = 6,
    StatsReq = 7,
    StatsResp = 8,
    Ack = 9,
    Err = 10,
}

impl FrameKind {
    pub fn from_u8(b: u8) -> Result<Self, TransportError> {
        Ok(match b {
            1 => FrameKind::GradPush,
            2 => FrameKind::ParamFetchReq,
            3 => FrameKind::ParamFetchResp,
            4 => FrameKind::PutExp,
            5 => FrameKind::SampleReq,
            6 => FrameKind::SampleResp,
            7 => FrameKind::StatsReq,
            8 => FrameKind::StatsResp,
            9 => FrameKind::Ack,
            10 => FrameKind::Err,
            other => return Err(TransportError::UnknownKind(other)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: FrameKind,
    pub payload: Vec<u8>,
}

/// Frame a payload: magic, kind, length, payload, crc32(payload).
pub fn encode_frame(kind: FrameKind, payload: &[u8]) -> Result<Vec<u8>, TransportError> {
    if payload.len() > MAX_PAYLOAD {
        return Err(TransportError::TooLarge(payload.len()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + 4);
    out.extend_from_slice(&FRAME_MAGIC);
    out.push(kind as u8);
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(payload);
    out.extend_from_slice(&crc32fast::hash(payload).to_le_bytes());
    Ok(out)
}

/// Decode one frame from the front of `buf`; returns the frame and the
/// number of bytes consumed. Never panics on arbitrary input.
pub fn decode_frame(buf: &[u8]) -> Result<(Frame, usize), TransportError> {
    if buf.len() < HEADER_LEN {
        return Err(TransportError::Truncated);
    }
    let magic: [u8; 4] = buf[0..4].try_into().expect("4 bytes");
    if magic != FRAME_MAGIC {
        return Err(TransportError::BadMagic(magic));
    }
    let kind = FrameKind::from_u8(buf[4])?;
    let len = u32::from_le_bytes(buf[5..9].try_into().expect("4 bytes")) as usize;
    if len > MAX_PAYLOAD {
        return Err(TransportError::TooLarge(len));
    }
    let total = HEADER_LEN + len + 4;
    if buf.len() < total {
        return Err(TransportError::Truncated);
    }
    let payload = &buf[HEADER_LEN..HEADER_LEN + len];
    let stored = u32::from_le_bytes(buf[HEADER_LEN + len..total].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(TransportError::BadCrc { stored, computed });
    }
    Ok((
        Frame {
            kind,
            payload: payload.to_vec(),
        },
        total,
    ))
}

/// Read one frame from a byte stream. A clean EOF before the first header
/// byte reports `ConnectionClosed`; EOF mid-frame reports `Truncated`.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Frame, TransportError> {
    let mut header = [0u8; HEADER_LEN];
    let mut filled = 0usize;
    while filled < HEADER_LEN {
        match r.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Err(TransportError::ConnectionClosed),
            Ok(0) => return Err(TransportError::Truncated),
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(TransportError::Io(e)),
        }
    }
    let magic: [u8; 4] = header[0..4].try_into().expect("4 bytes");
    if magic != FRAME_MAGIC {
        return Err(TransportError::BadMagic(magic));
    }
    let kind = FrameKind::from_u8(header[4])?;
    let len = u32::from_le_bytes(header[5..9].try_into().expect("4 bytes")) as usize;
    if len > MAX_PAYLOAD {
        return Err(TransportError::TooLarge(len));
    }
    let mut rest = vec![0u8; len + 4];
    r.read_exact(&mut rest).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            TransportError::Truncated
        } else {
            TransportError::Io(e)
        }
    })?;
    let payload = rest[..len].to_vec();
    let stored = u32::from_le_bytes(rest[len..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(&payload);
    if stored != computed {
        return Err(TransportError::BadCrc { stored, computed });
    }
    Ok(Frame { kind, payload })
}
