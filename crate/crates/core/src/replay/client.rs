use std::sync::{Arc, Mutex};

use rand::rngs::StdRng;

use crate::rl::Transition;
use crate::transport::{err_code, AckBody, Conn, Message, ReplayStats, StatsBody};

use super::local::LocalReplay;
use super::{ExperienceSink, ReplayError, ReplaySource};

/// A bundle's replay handle: one ring buffer behind a mutex, cloned into the
/// actor (writer) and the learner (reader).
#[derive(Clone)]
pub struct SharedReplay(Arc<Mutex<LocalReplay>>);

impl SharedReplay {
    pub fn new(capacity: usize) -> Self {
        SharedReplay(Arc::new(Mutex::new(LocalReplay::new(capacity))))
    }

    pub fn len(&self) -> usize {
        self.0.lock().expect("replay lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn insert(&self, t: Transition) {
        self.0.lock().expect("replay lock").insert(t);
    }

    pub fn sample_with(
        &self,
        batch: usize,
        rng: &mut StdRng,
    ) -> Result<Vec<Transition>, ReplayError> {
        self.0.lock().expect("replay lock").sample_minibatch(batch, rng)
    }

    /// Run a closure against the locked buffer (used by tests and tools).
    pub fn with<R>(&self, f: impl FnOnce(&LocalReplay) -> R) -> R {
        f(&self.0.lock().expect("replay lock"))
    }
}

impl ExperienceSink for SharedReplay {
    fn insert(&mut self, t: Transition) -> Result<(), ReplayError> {
        SharedReplay::insert(self, t);
        Ok(())
    }
}

/// The learner-side view of a [`SharedReplay`]: owns its sampling stream.
pub struct SharedReplaySource {
    replay: SharedReplay,
    rng: StdRng,
}

impl SharedReplaySource {
    pub fn new(replay: SharedReplay, rng: StdRng) -> Self {
        SharedReplaySource { replay, rng }
    }
}

impl ReplaySource for SharedReplaySource {
    fn stored(&mut self) -> Result<usize, ReplayError> {
        Ok(self.replay.len())
    }

    fn sample(&mut self, batch: usize) -> Result<Vec<Transition>, ReplayError> {
        self.replay.sample_with(batch, &mut self.rng)
    }
}

/// Client for the global replay store service.
pub struct GlobalReplayClient<C: Conn> {
    conn: C,
}

impl<C: Conn> GlobalReplayClient<C> {
    pub fn new(conn: C) -> Self {
        GlobalReplayClient { conn }
    }

    /// Store one transition; retries once if the store reports a routing
    /// failure, then gives up.
    pub fn put(&mut self, t: &Transition) -> Result<(u32, u64), ReplayError> {
        for attempt in 0..2 {
            self.conn.send(&Message::PutExp(t.clone()))?;
            match self.conn.recv()? {
                Message::Ack(AckBody::ExpStored {
                    shard_id,
                    shard_size,
                }) => return Ok((shard_id, shard_size)),
                Message::Err(e) if e.code == err_code::UNAVAILABLE && attempt == 0 => continue,
                Message::Err(e) => return Err(ReplayError::Rejected(e.detail)),
                other => {
                    return Err(ReplayError::UnexpectedResponse(format!(
                        "{:?}",
                        other.kind()
                    )))
                }
            }
        }
        unreachable!("put loop returns on the second attempt")
    }

    pub fn sample_remote(&mut self, batch: u32) -> Result<Vec<Transition>, ReplayError> {
        self.conn.send(&Message::SampleReq { batch })?;
        match self.conn.recv()? {
            Message::SampleResp { transitions } => Ok(transitions),
            Message::Err(e) if e.code == err_code::NOT_READY => Err(ReplayError::NotReady),
            Message::Err(e) => Err(ReplayError::Rejected(e.detail)),
            other => Err(ReplayError::UnexpectedResponse(format!(
                "{:?}",
                other.kind()
            ))),
        }
    }

    pub fn stats(&mut self) -> Result<ReplayStats, ReplayError> {
        self.conn.send(&Message::StatsReq)?;
        match self.conn.recv()? {
            Message::StatsResp(StatsBody::ReplayStore(stats)) => Ok(stats),
            other => Err(ReplayError::UnexpectedResponse(format!(
                "{:?}",
                other.kind()
            ))),
        }
    }
}

impl<C: Conn> ExperienceSink for GlobalReplayClient<C> {
    fn insert(&mut self, t: Transition) -> Result<(), ReplayError> {
        self.put(&t).map(|_| ())
    }
}

impl<C: Conn> ReplaySource for GlobalReplayClient<C> {
    fn stored(&mut self) -> Result<usize, ReplayError> {
        Ok(self.stats()?.shard_sizes.iter().sum::<u64>() as usize)
    }

    fn sample(&mut self, batch: usize) -> Result<Vec<Transition>, ReplayError> {
        self.sample_remote(batch as u32)
    }
}
