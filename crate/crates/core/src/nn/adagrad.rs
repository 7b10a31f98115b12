use super::NnError;

/// Per-parameter AdaGrad state for one slice of the flat vector.
///
/// Accumulators are sums of squared gradients and never decrease; the step
/// for parameter `i` is `base_rate * g[i] / (sqrt(acc[i]) + stabilizer)`.
#[derive(Debug, Clone)]
pub struct AdaGradState {
    accumulators: Vec<f64>,
    base_rate: f64,
    stabilizer: f64,
}

impl AdaGradState {
    pub fn new(len: usize, base_rate: f64, stabilizer: f64) -> Result<Self, NnError> {
        if base_rate.is_nan() || base_rate <= 0.0 {
            return Err(NnError::BadOptimizerConfig(format!(
                "base rate must be > 0, got {base_rate}"
            )));
        }
        if stabilizer.is_nan() || stabilizer <= 0.0 {
            return Err(NnError::BadOptimizerConfig(format!(
                "stabilizer must be > 0, got {stabilizer}"
            )));
        }
        Ok(AdaGradState {
            accumulators: vec![0.0; len],
            base_rate,
            stabilizer,
        })
    }

    pub fn len(&self) -> usize {
        self.accumulators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.accumulators.is_empty()
    }

    pub fn accumulators(&self) -> &[f64] {
        &self.accumulators
    }

    pub fn base_rate(&self) -> f64 {
        self.base_rate
    }

    /// Apply one descent step in place:
    /// `acc[i] += g[i]^2; p[i] -= base_rate * g[i] / (sqrt(acc[i]) + stabilizer)`.
    pub fn apply(&mut self, params: &mut [f64], grad: &[f64]) -> Result<(), NnError> {
        if params.len() != self.accumulators.len() {
            return Err(NnError::LengthMismatch {
                left: params.len(),
                right: self.accumulators.len(),
            });
        }
        if grad.len() != params.len() {
            return Err(NnError::LengthMismatch {
                left: grad.len(),
                right: params.len(),
            });
        }
        for ((p, g), acc) in params
            .iter_mut()
            .zip(grad.iter())
            .zip(self.accumulators.iter_mut())
        {
            *acc += g * g;
            *p -= self.base_rate * g / (acc.sqrt() + self.stabilizer);
        }
        Ok(())
    }
}
