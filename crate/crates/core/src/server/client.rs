use std::sync::Arc;

use thiserror::Error;

use crate::nn::{Layout, NnError, ParamVector};
use crate::transport::{
    AckBody, Conn, Message, ServerStats, ShardBitmap, ShardSlice, StatsBody, TransportError,
};

use super::state::{shard_ranges, ApplyOutcome, ParamServer};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("server rejected request: {0}")]
    Rejected(String),
    #[error("unexpected response: {0}")]
    Unexpected(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("bad fetch response: {0}")]
    BadFetch(String),
}

/// What actors and learners need from the parameter server.
pub trait ParamClient {
    /// Fetch every shard and reassemble the flat vector.
    fn fetch_full(&mut self) -> Result<(u64, ParamVector), ClientError>;
    /// Push a full-coverage gradient tagged with its base version.
    fn push_gradient(
        &mut self,
        base_version: u64,
        grad: &ParamVector,
    ) -> Result<ApplyOutcome, ClientError>;
    fn server_stats(&mut self) -> Result<ServerStats, ClientError>;
}

/// Split a flat vector into per-shard slices covering every shard.
pub fn split_into_slices(v: &ParamVector, ranges: &[(usize, usize)]) -> Vec<ShardSlice> {
    ranges
        .iter()
        .enumerate()
        .map(|(id, &(offset, len))| ShardSlice {
            shard_id: id as u32,
            values: v.values()[offset..offset + len].to_vec(),
        })
        .collect()
}

/// Reassemble fetched slices into a flat vector; every shard must appear
/// exactly once with its exact length.
pub fn assemble_slices(
    layout: &Layout,
    ranges: &[(usize, usize)],
    slices: &[ShardSlice],
) -> Result<ParamVector, ClientError> {
    let mut values = vec![0.0f64; layout.total_len()];
    let mut seen = vec![false; ranges.len()];
    for s in slices {
        let id = s.shard_id as usize;
        let Some(&(offset, len)) = ranges.get(id) else {
            return Err(ClientError::BadFetch(format!("shard id {id} out of range")));
        };
        if seen[id] {
            return Err(ClientError::BadFetch(format!("duplicate shard {id}")));
        }
        if s.values.len() != len {
            return Err(ClientError::BadFetch(format!(
                "shard {id} length {} != {len}",
                s.values.len()
            )));
        }
        values[offset..offset + len].copy_from_slice(&s.values);
        seen[id] = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(ClientError::BadFetch(format!("shard {missing} missing")));
    }
    Ok(ParamVector::new(layout.clone(), values)?)
}

fn interpret_push_response(msg: Message) -> Result<ApplyOutcome, ClientError> {
    match msg {
        Message::Ack(AckBody::GradAccepted { new_version }) => {
            Ok(ApplyOutcome::Accepted { new_version })
        }
        Message::Ack(AckBody::GradDiscardedStale { current_version }) => {
            Ok(ApplyOutcome::DiscardedStale { current_version })
        }
        Message::Err(e) => Err(ClientError::Rejected(e.detail)),
        other => Err(ClientError::Unexpected(format!("{:?}", other.kind()))),
    }
}

fn interpret_fetch_response(
    msg: Message,
    layout: &Layout,
    ranges: &[(usize, usize)],
) -> Result<(u64, ParamVector), ClientError> {
    match msg {
        Message::ParamFetchResp { version, slices } => {
            Ok((version, assemble_slices(layout, ranges, &slices)?))
        }
        Message::Err(e) => Err(ClientError::Rejected(e.detail)),
        other => Err(ClientError::Unexpected(format!("{:?}", other.kind()))),
    }
}

fn interpret_stats_response(msg: Message) -> Result<ServerStats, ClientError> {
    match msg {
        Message::StatsResp(StatsBody::ParamServer(stats)) => Ok(stats),
        Message::Err(e) => Err(ClientError::Rejected(e.detail)),
        other => Err(ClientError::Unexpected(format!("{:?}", other.kind()))),
    }
}

/// Parameter-server client over any transport connection.
pub struct RemoteParamClient<C: Conn> {
    conn: C,
    layout: Layout,
    ranges: Vec<(usize, usize)>,
}

impl<C: Conn> RemoteParamClient<C> {
    pub fn new(conn: C, layout: Layout, n_shards: u32) -> Self {
        let ranges = shard_ranges(layout.total_len(), n_shards);
        RemoteParamClient {
            conn,
            layout,
            ranges,
        }
    }
}

impl<C: Conn> ParamClient for RemoteParamClient<C> {
    fn fetch_full(&mut self) -> Result<(u64, ParamVector), ClientError> {
        self.conn.send(&Message::ParamFetchReq {
            shards: ShardBitmap::all(),
        })?;
        interpret_fetch_response(self.conn.recv()?, &self.layout, &self.ranges)
    }

    fn push_gradient(
        &mut self,
        base_version: u64,
        grad: &ParamVector,
    ) -> Result<ApplyOutcome, ClientError> {
        self.conn.send(&Message::GradPush {
            base_version,
            slices: split_into_slices(grad, &self.ranges),
        })?;
        interpret_push_response(self.conn.recv()?)
    }

    fn server_stats(&mut self) -> Result<ServerStats, ClientError> {
        self.conn.send(&Message::StatsReq)?;
        interpret_stats_response(self.conn.recv()?)
    }
}

/// Zero-transport client that calls the server handler directly. Used by the
/// deterministic single-process runtime and the serial-equivalence oracle.
pub struct InlineParamClient {
    server: Arc<ParamServer>,
}

impl InlineParamClient {
    pub fn new(server: Arc<ParamServer>) -> Self {
        InlineParamClient { server }
    }
}

impl ParamClient for InlineParamClient {
    fn fetch_full(&mut self) -> Result<(u64, ParamVector), ClientError> {
        let resp = self.server.handle(&Message::ParamFetchReq {
            shards: ShardBitmap::all(),
        });
        interpret_fetch_response(resp, self.server.layout(), self.server.ranges())
    }

    fn push_gradient(
        &mut self,
        base_version: u64,
        grad: &ParamVector,
    ) -> Result<ApplyOutcome, ClientError> {
        let resp = self.server.handle(&Message::GradPush {
            base_version,
            slices: split_into_slices(grad, self.server.ranges()),
        });
        interpret_push_response(resp)
    }

    fn server_stats(&mut self) -> Result<ServerStats, ClientError> {
        interpret_stats_response(self.server.handle(&Message::StatsReq))
    }
}
