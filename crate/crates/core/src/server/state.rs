use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use crate::nn::{AdaGradState, Layout, ParamVector};
use crate::transport::{
    err_code, AckBody, ErrBody, Message, ServerStats, ShardBitmap, ShardSlice, StatsBody,
};

use super::ServerError;

/// Contiguous equal-length shard blocks over `total` parameters; the
/// remainder goes to the last shard.
pub fn shard_ranges(total: usize, n_shards: u32) -> Vec<(usize, usize)> {
    let n = n_shards as usize;
    let base = total / n;
    (0..n)
        .map(|i| {
            let offset = i * base;
            let len = if i == n - 1 { total - offset } else { base };
            (offset, len)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApplyOutcome {
    Accepted { new_version: u64 },
    DiscardedStale { current_version: u64 },
}

struct ShardState {
    params: Vec<f64>,
    opt: AdaGradState,
    apply_count: u64,
}

/// The central parameter server. `&self` everywhere: shard state sits behind
/// per-shard mutexes, counters are atomic, and gradient acceptance is
/// serialized by `accept_gate`.
pub struct ParamServer {
    layout: Layout,
    ranges: Vec<(usize, usize)>,
    shards: Vec<Mutex<ShardState>>,
    version: AtomicU64,
    applied: AtomicU64,
    discarded_stale: AtomicU64,
    accept_gate: Mutex<()>,
    max_delay: Option<u64>,
}

impl ParamServer {
    /// `max_delay: None` disables the staleness filter.
    pub fn new(
        initial: &ParamVector,
        n_shards: u32,
        base_rate: f64,
        stabilizer: f64,
        max_delay: Option<u64>,
    ) -> Result<Self, ServerError> {
        let total = initial.len();
        if n_shards == 0 {
            return Err(ServerError::Construction("need at least one shard".into()));
        }
        if (n_shards as usize) > total {
            return Err(ServerError::Construction(format!(
                "{n_shards} shards over {total} parameters"
            )));
        }
        let ranges = shard_ranges(total, n_shards);
        // Disjoint coverage: contiguous blocks, re-checked here.
        let mut expected = 0usize;
        for &(offset, len) in &ranges {
            if offset != expected {
                return Err(ServerError::Construction("shard blocks not disjoint".into()));
            }
            expected += len;
        }
        if expected != total {
            return Err(ServerError::Construction(
                "shard blocks do not cover the parameter vector".into(),
            ));
        }
        let shards = ranges
            .iter()
            .map(|&(offset, len)| {
                Ok(Mutex::new(ShardState {
                    params: initial.values()[offset..offset + len].to_vec(),
                    opt: AdaGradState::new(len, base_rate, stabilizer)?,
                    apply_count: 0,
                }))
            })
            .collect::<Result<Vec<_>, ServerError>>()?;
        Ok(ParamServer {
            layout: initial.layout().clone(),
            ranges,
            shards,
            version: AtomicU64::new(0),
            applied: AtomicU64::new(0),
            discarded_stale: AtomicU64::new(0),
            accept_gate: Mutex::new(()),
            max_delay,
        })
    }

    pub fn n_shards(&self) -> u32 {
        self.shards.len() as u32
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn ranges(&self) -> &[(usize, usize)] {
        &self.ranges
    }

    pub fn current_version(&self) -> u64 {
        self.version.load(Ordering::SeqCst)
    }

    /// Validate a gradient message, apply it shard by shard unless stale.
    ///
    /// Validation failures reject the whole message before any shard is
    /// touched. A stale message changes nothing but the discard counter.
    pub fn apply_gradient(
        &self,
        base_version: u64,
        slices: &[ShardSlice],
    ) -> Result<ApplyOutcome, ServerError> {
        if slices.is_empty() {
            return Err(ServerError::Protocol("gradient message with no slices".into()));
        }
        let mut seen = vec![false; self.shards.len()];
        for s in slices {
            let id = s.shard_id as usize;
            if id >= self.shards.len() {
                return Err(ServerError::Protocol(format!(
                    "shard id {} out of range ({} shards)",
                    s.shard_id,
                    self.shards.len()
                )));
            }
            if seen[id] {
                return Err(ServerError::Protocol(format!(
                    "duplicate slice for shard {}",
                    s.shard_id
                )));
            }
            seen[id] = true;
            let expected = self.ranges[id].1;
            if s.values.len() != expected {
                return Err(ServerError::Protocol(format!(
                    "shard {} slice length {} != {}",
                    s.shard_id,
                    s.values.len(),
                    expected
                )));
            }
        }

        let _gate = self.accept_gate.lock().expect("accept gate");
        let current = self.version.load(Ordering::SeqCst);
        if let Some(max_delay) = self.max_delay {
            if current.saturating_sub(base_version) > max_delay {
                self.discarded_stale.fetch_add(1, Ordering::SeqCst);
                return Ok(ApplyOutcome::DiscardedStale {
                    current_version: current,
                });
            }
        }
        for s in slices {
            let mut shard = self.shards[s.shard_id as usize].lock().expect("shard lock");
            let ShardState {
                ref mut params,
                ref mut opt,
                ref mut apply_count,
            } = *shard;
            opt.apply(params, &s.values)?;
            *apply_count += 1;
        }
        let new_version = current + 1;
        self.version.store(new_version, Ordering::SeqCst);
        self.applied.fetch_add(1, Ordering::SeqCst);
        Ok(ApplyOutcome::Accepted { new_version })
    }

    /// Copy the selected shards plus the version at response time.
    pub fn fetch(&self, shards: &ShardBitmap) -> Result<(u64, Vec<ShardSlice>), ServerError> {
        let n = self.n_shards();
        if !shards.is_all() {
            let missing: Vec<u32> = shards
                .set_ids()
                .into_iter()
                .filter(|&id| id >= n)
                .collect();
            if !missing.is_empty() {
                return Err(ServerError::ShardsUnavailable(missing));
            }
        }
        let ids = shards.selected(n);
        let mut slices = Vec::with_capacity(ids.len());
        for id in ids {
            let shard = self.shards[id as usize].lock().expect("shard lock");
            slices.push(ShardSlice {
                shard_id: id,
                values: shard.params.clone(),
            });
        }
        let version = self.version.load(Ordering::SeqCst);
        Ok((version, slices))
    }

    pub fn stats(&self) -> ServerStats {
        ServerStats {
            applied: self.applied.load(Ordering::SeqCst),
            discarded_stale: self.discarded_stale.load(Ordering::SeqCst),
            version: self.version.load(Ordering::SeqCst),
            per_shard_apply_counts: self
                .shards
                .iter()
                .map(|s| s.lock().expect("shard lock").apply_count)
                .collect(),
        }
    }

    /// Service entry point: one request in, one response out.
    pub fn handle(&self, msg: &Message) -> Message {
        match msg {
            Message::GradPush {
                base_version,
                slices,
            } => match self.apply_gradient(*base_version, slices) {
                Ok(ApplyOutcome::Accepted { new_version }) => {
                    Message::Ack(AckBody::GradAccepted { new_version })
                }
                Ok(ApplyOutcome::DiscardedStale { current_version }) => {
                    Message::Ack(AckBody::GradDiscardedStale { current_version })
                }
                Err(e) => Message::Err(ErrBody {
                    code: err_code::PROTOCOL,
                    detail: e.to_string(),
                }),
            },
            Message::ParamFetchReq { shards } => match self.fetch(shards) {
                Ok((version, slices)) => Message::ParamFetchResp { version, slices },
                Err(ServerError::ShardsUnavailable(missing)) => Message::Err(ErrBody {
                    code: err_code::UNAVAILABLE,
                    detail: format!("missing shards {missing:?}"),
                }),
                Err(e) => Message::Err(ErrBody {
                    code: err_code::PROTOCOL,
                    detail: e.to_string(),
                }),
            },
            Message::StatsReq => Message::StatsResp(StatsBody::ParamServer(self.stats())),
            other => Message::Err(ErrBody {
                code: err_code::PROTOCOL,
                detail: format!("parameter server cannot serve {:?}", other.kind()),
            }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{AdaGradState, QNetwork};
    use crate::server::client::split_into_slices;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn small_server(max_delay: Option<u64>) -> (ParamServer, ParamVector) {
        let net = QNetwork::seeded(QNetwork::mlp_spec(3, &[4], 2), 7).unwrap();
        let initial = net.flatten_copy();
        let server = ParamServer::new(&initial, 3, 0.05, 1e-8, max_delay).unwrap();
        (server, initial)
    }

    fn full_grad(initial: &ParamVector, server: &ParamServer, value: f64) -> Vec<ShardSlice> {
        let grad = ParamVector::new(initial.layout().clone(), vec![value; initial.len()]).unwrap();
        split_into_slices(&grad, server.ranges())
    }

    #[test]
    fn shard_ranges_are_disjoint_and_cover() {
        for (total, n) in [(10usize, 3u32), (31, 31), (4674, 31), (5, 5)] {
            let ranges = shard_ranges(total, n);
            let mut expected = 0usize;
            for &(offset, len) in &ranges {
                assert_eq!(offset, expected);
                assert!(len > 0 || total < n as usize);
                expected += len;
            }
            assert_eq!(expected, total);
        }
        // remainder goes to the last shard
        let ranges = shard_ranges(10, 3);
        assert_eq!(ranges, vec![(0, 3), (3, 3), (6, 4)]);
    }

    #[test]
    fn fresh_server_fetch_is_version_zero_initial_weights() {
        let (server, initial) = small_server(Some(50));
        let (version, slices) = server.fetch(&ShardBitmap::all()).unwrap();
        assert_eq!(version, 0);
        let flat: Vec<f64> = slices.iter().flat_map(|s| s.values.clone()).collect();
        assert_eq!(flat, initial.values());
    }

    #[test]
    fn version_counts_accepted_messages() {
        let (server, initial) = small_server(None);
        let slices = full_grad(&initial, &server, 0.1);
        let (v0, _) = server.fetch(&ShardBitmap::all()).unwrap();
        server.apply_gradient(v0, &slices).unwrap();
        let (v1, _) = server.fetch(&ShardBitmap::all()).unwrap();
        assert_eq!((v0, v1), (0, 1));
    }

    #[test]
    fn staleness_filter_is_exact_at_the_boundary() {
        let (server, initial) = small_server(Some(20));
        let slices = full_grad(&initial, &server, 0.0);
        // drive the version to 125 with zero gradients
        for v in 0..125 {
            assert_eq!(
                server.apply_gradient(v, &slices).unwrap(),
                ApplyOutcome::Accepted { new_version: v + 1 }
            );
        }
        // 125 - 100 = 25 > 20: discarded
        assert_eq!(
            server.apply_gradient(100, &slices).unwrap(),
            ApplyOutcome::DiscardedStale {
                current_version: 125
            }
        );
        // drive to 120 total? version is still 125; boundary case:
        // base 105 gives lag exactly 20, accepted.
        assert_eq!(
            server.apply_gradient(105, &slices).unwrap(),
            ApplyOutcome::Accepted { new_version: 126 }
        );
        let stats = server.stats();
        assert_eq!(stats.discarded_stale, 1);
        assert_eq!(stats.applied, 126);
        assert_eq!(stats.version, 126);
    }

    #[test]
    fn zero_gradient_accepted_leaves_params_bitwise_unchanged() {
        let (server, initial) = small_server(Some(50));
        let slices = full_grad(&initial, &server, 0.0);
        server.apply_gradient(0, &slices).unwrap();
        let (version, fetched) = server.fetch(&ShardBitmap::all()).unwrap();
        assert_eq!(version, 1);
        let flat: Vec<u64> = fetched
            .iter()
            .flat_map(|s| s.values.iter().map(|v| v.to_bits()))
            .collect();
        let expected: Vec<u64> = initial.values().iter().map(|v| v.to_bits()).collect();
        assert_eq!(flat, expected);
    }

    #[test]
    fn fresh_stats_are_all_zero() {
        let (server, _) = small_server(Some(50));
        let stats = server.stats();
        assert_eq!(stats.applied, 0);
        assert_eq!(stats.discarded_stale, 0);
        assert_eq!(stats.version, 0);
        assert!(stats.per_shard_apply_counts.iter().all(|&c| c == 0));
    }

    #[test]
    fn per_shard_counts_sum_to_applied_times_shards() {
        let (server, initial) = small_server(None);
        let slices = full_grad(&initial, &server, 0.5);
        for v in 0..9 {
            server.apply_gradient(v, &slices).unwrap();
        }
        let stats = server.stats();
        assert_eq!(stats.applied, 9);
        assert_eq!(
            stats.per_shard_apply_counts.iter().sum::<u64>(),
            stats.applied * server.n_shards() as u64
        );
    }

    #[test]
    fn malformed_slices_are_rejected_without_partial_apply() {
        let (server, initial) = small_server(None);
        let mut bad = full_grad(&initial, &server, 1.0);
        bad[1].values.pop();
        assert!(matches!(
            server.apply_gradient(0, &bad),
            Err(ServerError::Protocol(_))
        ));
        // nothing applied, version unchanged, params untouched
        let stats = server.stats();
        assert_eq!(stats.version, 0);
        assert!(stats.per_shard_apply_counts.iter().all(|&c| c == 0));
        let (_, fetched) = server.fetch(&ShardBitmap::all()).unwrap();
        let flat: Vec<f64> = fetched.iter().flat_map(|s| s.values.clone()).collect();
        assert_eq!(flat, initial.values());

        let mut dup = full_grad(&initial, &server, 1.0);
        dup[1].shard_id = 0;
        // make lengths consistent with shard 0 so the duplicate check fires
        dup[1].values = dup[0].values.clone();
        assert!(matches!(
            server.apply_gradient(0, &dup),
            Err(ServerError::Protocol(_))
        ));

        let mut out_of_range = full_grad(&initial, &server, 1.0);
        out_of_range[0].shard_id = 99;
        assert!(matches!(
            server.apply_gradient(0, &out_of_range),
            Err(ServerError::Protocol(_))
        ));
    }

    #[test]
    fn fetch_of_unknown_shards_lists_them() {
        let (server, _) = small_server(None);
        let bitmap = ShardBitmap::from_ids(8, &[0, 5, 7]);
        match server.fetch(&bitmap) {
            Err(ServerError::ShardsUnavailable(missing)) => assert_eq!(missing, vec![5, 7]),
            other => panic!("expected ShardsUnavailable, got {other:?}"),
        }
    }

    #[test]
    fn sharded_apply_matches_serial_adagrad_bitwise() {
        // Applying through the sharded server must be element-for-element
        // identical to a serial AdaGrad loop over the full flat vector.
        let net = QNetwork::seeded(QNetwork::mlp_spec(4, &[8, 6], 3), 21).unwrap();
        let initial = net.flatten_copy();
        let server = ParamServer::new(&initial, 5, 0.05, 1e-8, None).unwrap();

        let mut serial_params = initial.values().to_vec();
        let mut serial_opt = AdaGradState::new(serial_params.len(), 0.05, 1e-8).unwrap();

        let mut rng = StdRng::seed_from_u64(3);
        for v in 0..50u64 {
            let grad: Vec<f64> = (0..serial_params.len())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let gvec = ParamVector::new(initial.layout().clone(), grad.clone()).unwrap();
            server
                .apply_gradient(v, &split_into_slices(&gvec, server.ranges()))
                .unwrap();
            serial_opt.apply(&mut serial_params, &grad).unwrap();
        }

        let (_, fetched) = server.fetch(&ShardBitmap::all()).unwrap();
        let flat: Vec<u64> = fetched
            .iter()
            .flat_map(|s| s.values.iter().map(|x| x.to_bits()))
            .collect();
        let expected: Vec<u64> = serial_params.iter().map(|x| x.to_bits()).collect();
        assert_eq!(flat, expected);
    }

    #[test]
    fn concurrent_fetch_never_sees_a_torn_shard() {
        // One writer pushes distinguishable gradients while readers fetch;
        // every fetched shard must equal one of the states produced by a
        // whole number of applies (oracle: replay the apply sequence).
        let total = 64usize;
        let layout = crate::nn::Layout::new(vec![crate::nn::LayoutEntry::new(
            "w",
            vec![total],
            0,
        )])
        .unwrap();
        let initial = ParamVector::new(layout.clone(), vec![0.0; total]).unwrap();
        let server = std::sync::Arc::new(
            ParamServer::new(&initial, 4, 0.1, 1e-8, None).unwrap(),
        );

        let applies = 200u64;
        // Precompute the per-shard state after each apply count.
        let grad = ParamVector::new(layout.clone(), vec![1.0; total]).unwrap();
        let mut oracle: Vec<Vec<f64>> = vec![initial.values().to_vec()];
        {
            let mut p = initial.values().to_vec();
            let mut opt = AdaGradState::new(total, 0.1, 1e-8).unwrap();
            for _ in 0..applies {
                opt.apply(&mut p, grad.values()).unwrap();
                oracle.push(p.clone());
            }
        }

        let writer = {
            let server = std::sync::Arc::clone(&server);
            let grad = grad.clone();
            std::thread::spawn(move || {
                for v in 0..applies {
                    let slices = split_into_slices(&grad, server.ranges());
                    server.apply_gradient(v, &slices).unwrap();
                }
            })
        };

        let reader = {
            let server = std::sync::Arc::clone(&server);
            let oracle = oracle.clone();
            std::thread::spawn(move || {
                for _ in 0..400 {
                    let (_, slices) = server.fetch(&ShardBitmap::all()).unwrap();
                    for s in &slices {
                        let (offset, len) = server.ranges()[s.shard_id as usize];
                        let matches_some_prefix = oracle.iter().any(|state| {
                            state[offset..offset + len]
                                .iter()
                                .zip(s.values.iter())
                                .all(|(a, b)| a.to_bits() == b.to_bits())
                        });
                        assert!(
                            matches_some_prefix,
                            "shard {} does not match any whole number of applies",
                            s.shard_id
                        );
                    }
                }
            })
        };

        writer.join().unwrap();
        reader.join().unwrap();
    }
}


