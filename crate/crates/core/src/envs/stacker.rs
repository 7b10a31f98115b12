use std::collections::VecDeque;

/// Sliding window over the last `k` observations, concatenated oldest-first
/// and zero-padded until `k` observations have been seen.
#[derive(Debug, Clone)]
pub struct ObservationStacker {
    k: usize,
    dim: usize,
    window: VecDeque<Vec<f64>>,
}

impl ObservationStacker {
    /// Conventional window when stacking is wanted at all.
    pub const DEFAULT_WINDOW: usize = 4;

    /// A stacker with the default four-observation window.
    pub fn with_default_window(dim: usize) -> Self {
        ObservationStacker::new(Self::DEFAULT_WINDOW, dim)
    }

    pub fn new(k: usize, dim: usize) -> Self {
        assert!(k >= 1, "window must hold at least one observation");
        ObservationStacker {
            k,
            dim,
            window: VecDeque::with_capacity(k),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.k * self.dim
    }

    /// Clear the window at an episode boundary.
    pub fn reset(&mut self) {
        self.window.clear();
    }

    /// Push one observation and return the stacked vector.
    pub fn push(&mut self, obs: &[f64]) -> Vec<f64> {
        assert_eq!(obs.len(), self.dim, "observation dim mismatch");
        if self.window.len() == self.k {
            self.window.pop_front();
        }
        self.window.push_back(obs.to_vec());
        let mut out = vec![0.0; self.output_dim()];
        let pad = self.k - self.window.len();
        for (i, past) in self.window.iter().enumerate() {
            let at = (pad + i) * self.dim;
            out[at..at + self.dim].copy_from_slice(past);
        }
        out
    }
}
