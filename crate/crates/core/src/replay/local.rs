use rand::Rng;

use crate::rl::Transition;

use super::ReplayError;

/// Fixed-capacity FIFO ring of transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct LocalReplay {
    capacity: usize,
    storage: Vec<Transition>,
    write_cursor: usize,
    evicted: u64,
}

impl LocalReplay {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        LocalReplay {
            capacity,
            storage: Vec::with_capacity(capacity),
            write_cursor: 0,
            evicted: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    /// Number of inserts that overwrote an older entry.
    pub fn evictions(&self) -> u64 {
        self.evicted
    }

    /// Store a transition, overwriting the oldest once full.
    pub fn insert(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.write_cursor] = t;
            self.evicted += 1;
        }
        self.write_cursor = (self.write_cursor + 1) % self.capacity;
    }

    /// `batch` independent uniform draws with replacement, drawing one
    /// `random_range(0..len)` index per element in order.
    pub fn sample_minibatch<R: Rng>(
        &self,
        batch: usize,
        rng: &mut R,
    ) -> Result<Vec<Transition>, ReplayError> {
        if self.storage.is_empty() {
            return Err(ReplayError::NotReady);
        }
        let mut out = Vec::with_capacity(batch);
        for _ in 0..batch {
            let idx = rng.random_range(0..self.storage.len());
            out.push(self.storage[idx].clone());
        }
        Ok(out)
    }

    /// Direct slot access, `idx < len()`. Slot order is unrelated to
    /// insertion order once the ring has wrapped.
    pub fn get(&self, idx: usize) -> Option<&Transition> {
        self.storage.get(idx)
    }

    /// Stored transitions in insertion order, oldest first.
    pub fn iter_in_order(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.storage.len() < self.capacity {
            0
        } else {
            self.write_cursor
        };
        self.storage[split..].iter().chain(self.storage[..split].iter())
    }
}
