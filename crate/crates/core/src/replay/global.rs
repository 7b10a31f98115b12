use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::rl::Transition;
use crate::transport::{err_code, AckBody, ErrBody, Message, ReplayStats};

use super::local::LocalReplay;
use super::ReplayError;

/// Shard assignment for a transition: FNV-1a over (actor_id, step), modulo
/// the shard count. Stable across runs and documented in docs/wire.md.
pub fn shard_key(actor_id: u32, step: u64, n_shards: u32) -> u32 {
    const FNV_OFFSET: u64 = 0xcbf29ce484222325;
    const FNV_PRIME: u64 = 0x100000001b3;
    let mut h = FNV_OFFSET;
    for b in actor_id
        .to_le_bytes()
        .iter()
        .chain(step.to_le_bytes().iter())
    {
        h ^= *b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    (h % n_shards as u64) as u32
}

/// The global experience store: equal-capacity FIFO rings, one per shard.
///
/// Sampling draws a flat index uniform over the total stored count and maps
/// it through the cumulative shard sizes, which is exactly "shard
/// proportional to size, then uniform within the shard".
#[derive(Debug)]
pub struct GlobalReplay {
    shards: Vec<LocalReplay>,
    puts: u64,
    rng: StdRng,
}

impl GlobalReplay {
    pub fn new(n_shards: u32, per_shard_capacity: usize, seed: u64) -> Self {
        assert!(n_shards > 0, "need at least one shard");
        GlobalReplay {
            shards: (0..n_shards)
                .map(|_| LocalReplay::new(per_shard_capacity))
                .collect(),
            puts: 0,
            rng: StdRng::seed_from_u64(seed),
        }
    }

    pub fn n_shards(&self) -> u32 {
        self.shards.len() as u32
    }

    pub fn total_len(&self) -> usize {
        self.shards.iter().map(|s| s.len()).sum()
    }

    /// Route by shard key and store; returns (shard_id, shard size after).
    pub fn put(&mut self, t: Transition) -> (u32, u64) {
        let shard = shard_key(t.actor_id, t.step, self.n_shards());
        self.shards[shard as usize].insert(t);
        self.puts += 1;
        (shard, self.shards[shard as usize].len() as u64)
    }

    /// `batch` uniform-with-replacement draws over all stored transitions.
    pub fn sample(&mut self, batch: usize) -> Result<Vec<Transition>, ReplayError> {
        let total = self.total_len();
        if total == 0 {
            return Err(ReplayError::NotReady);
        }
        let mut out = Vec::with_capacity(batch);
        for _ in 0..batch {
            let mut flat = self.rng.random_range(0..total);
            for shard in &self.shards {
                if flat < shard.len() {
                    out.push(shard.get(flat).expect("index in range").clone());
                    break;
                }
                flat -= shard.len();
            }
        }
        Ok(out)
    }

    pub fn stats(&self) -> ReplayStats {
        ReplayStats {
            shard_sizes: self.shards.iter().map(|s| s.len() as u64).collect(),
            puts: self.puts,
            evictions: self.shards.iter().map(|s| s.evictions()).sum(),
        }
    }

    /// Service entry point: one request message in, one response out.
    pub fn handle(&mut self, msg: &Message) -> Message {
        match msg {
            Message::PutExp(t) => {
                let (shard_id, shard_size) = self.put(t.clone());
                Message::Ack(AckBody::ExpStored {
                    shard_id,
                    shard_size,
                })
            }
            Message::SampleReq { batch } => match self.sample(*batch as usize) {
                Ok(transitions) => Message::SampleResp { transitions },
                Err(ReplayError::NotReady) => Message::Err(ErrBody {
                    code: err_code::NOT_READY,
                    detail: "replay store is empty".into(),
                }),
                Err(e) => Message::Err(ErrBody {
                    code: err_code::PROTOCOL,
                    detail: e.to_string(),
                }),
            },
            Message::StatsReq => Message::StatsResp(crate::transport::StatsBody::ReplayStore(
                self.stats(),
            )),
            other => Message::Err(ErrBody {
                code: err_code::PROTOCOL,
                detail: format!("replay store cannot serve {:?}", other.kind()),
            }),
        }
    }
}
