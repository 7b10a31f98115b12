use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use super::params::{Layout, LayoutEntry, ParamVector};
use super::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    /// max(0, z); the subgradient at exactly 0 is defined as 0.
    Rectifier,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Rectifier => {
                if z > 0.0 {
                    z
                } else {
                    0.0
                }
            }
            Activation::Identity => z,
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Rectifier => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

/// Per-layer inputs and preactivations captured during a forward pass.
///
/// Used by backpropagation and by the finite-difference tests, which skip
/// instances whose preactivations sit on the rectifier kink.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `inputs[l]` is the input vector fed to layer `l`; `inputs[0]` is the state.
    pub inputs: Vec<Vec<f64>>,
    /// `preactivations[l]` is `W_l x + b_l` before the nonlinearity.
    pub preactivations: Vec<Vec<f64>>,
    /// Output of the final layer: one Q-value per action.
    pub q_values: Vec<f64>,
}

impl ForwardTrace {
    /// Smallest |z| over all preactivations; a value near zero means the
    /// instance sits close to a rectifier kink.
    pub fn min_abs_preactivation(&self) -> f64 {
        self.preactivations
            .iter()
            .flat_map(|zs| zs.iter().map(|z| z.abs()))
            .fold(f64::INFINITY, f64::min)
    }
}

/// A multilayer perceptron Q-function over flat parameters.
///
/// Weights for layer `l` live in layout entry `l{l}.w` with shape
/// `[out_dim, in_dim]` (row-major), biases in `l{l}.b` with shape
/// `[out_dim]`. Hidden layers are rectified, the output layer is linear and
/// has one unit per action.
#[derive(Debug, Clone)]
pub struct QNetwork {
    layers: Vec<LayerSpec>,
    params: ParamVector,
}

impl QNetwork {
    /// Layout for an MLP with the given layer specs.
    pub fn layout_for(layers: &[LayerSpec]) -> Result<Layout, NnError> {
        validate_layers(layers)?;
        let mut entries = Vec::with_capacity(layers.len() * 2);
        let mut offset = 0usize;
        for (i, l) in layers.iter().enumerate() {
            let w = LayoutEntry::new(format!("l{i}.w"), vec![l.out_dim, l.in_dim], offset);
            offset += w.len;
            let b = LayoutEntry::new(format!("l{i}.b"), vec![l.out_dim], offset);
            offset += b.len;
            entries.push(w);
            entries.push(b);
        }
        Layout::new(entries)
    }

    /// Hidden layers rectified, linear output layer with `n_actions` units.
    pub fn mlp_spec(input_dim: usize, hidden: &[usize], n_actions: usize) -> Vec<LayerSpec> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut in_dim = input_dim;
        for &h in hidden {
            layers.push(LayerSpec {
                in_dim,
                out_dim: h,
                activation: Activation::Rectifier,
            });
            in_dim = h;
        }
        layers.push(LayerSpec {
            in_dim,
            out_dim: n_actions,
            activation: Activation::Identity,
        });
        layers
    }

    /// All-zero parameters.
    pub fn zeros(layers: Vec<LayerSpec>) -> Result<Self, NnError> {
        let layout = Self::layout_for(&layers)?;
        Ok(QNetwork {
            layers,
            params: ParamVector::zeros(layout),
        })
    }

    /// Seeded init: weights uniform in +-1/sqrt(fan_in), biases zero.
    pub fn seeded(layers: Vec<LayerSpec>, seed: u64) -> Result<Self, NnError> {
        let mut net = Self::zeros(layers)?;
        let mut rng = StdRng::seed_from_u64(seed);
        for i in 0..net.layers.len() {
            let limit = 1.0 / (net.layers[i].in_dim as f64).sqrt();
            let name = format!("l{i}.w");
            let entry = net.params.layout().entry(&name).unwrap().clone();
            let values = net.params.values_mut();
            for v in &mut values[entry.offset..entry.offset + entry.len] {
                *v = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    /// Wrap an existing parameter vector; its layout must match the specs.
    pub fn from_params(layers: Vec<LayerSpec>, params: ParamVector) -> Result<Self, NnError> {
        let expected = Self::layout_for(&layers)?;
        if *params.layout() != expected {
            return Err(NnError::LayoutMismatch);
        }
        Ok(QNetwork { layers, params })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn n_actions(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    /// An owned copy of the flat parameters.
    pub fn flatten_copy(&self) -> ParamVector {
        self.params.clone()
    }

    /// Overwrite this network's parameters from a flat vector.
    pub fn sync_from(&mut self, src: &ParamVector) -> Result<(), NnError> {
        self.params.copy_from(src)
    }

    /// Q(s, .): one value per action. Pure: identical inputs give
    /// bit-identical outputs.
    pub fn forward(&self, state: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(state)?;
        let mut activation = state.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            activation = self.layer_forward(i, layer, &activation).1;
        }
        Ok(activation)
    }

    /// Forward pass that keeps per-layer inputs and preactivations.
    pub fn forward_trace(&self, state: &[f64]) -> Result<ForwardTrace, NnError> {
        self.check_input(state)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preactivations = Vec::with_capacity(self.layers.len());
        let mut activation = state.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            inputs.push(activation.clone());
            let (z, a) = self.layer_forward(i, layer, &activation);
            preactivations.push(z);
            activation = a;
        }
        Ok(ForwardTrace {
            inputs,
            preactivations,
            q_values: activation,
        })
    }

    /// Gradient of `upstream * Q(state, action)` with respect to every
    /// parameter, in this network's layout.
    pub fn backward(
        &self,
        state: &[f64],
        action: usize,
        upstream: f64,
    ) -> Result<ParamVector, NnError> {
        if action >= self.n_actions() {
            return Err(NnError::ActionRange {
                action,
                actions: self.n_actions(),
            });
        }
        let trace = self.forward_trace(state)?;
        let mut grad = ParamVector::zeros(self.params.layout().clone());

        // Output-layer delta: only the selected action's unit carries signal.
        let last = self.layers.len() - 1;
        let mut delta = vec![0.0; self.layers[last].out_dim];
        delta[action] = upstream * self.layers[last]
            .activation
            .derivative(trace.preactivations[last][action]);

        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &trace.inputs[l];
            let w_entry = grad.layout().entry(&format!("l{l}.w")).unwrap().clone();
            let b_entry = grad.layout().entry(&format!("l{l}.b")).unwrap().clone();
            {
                let g = grad.values_mut();
                for o in 0..layer.out_dim {
                    let row = w_entry.offset + o * layer.in_dim;
                    for i in 0..layer.in_dim {
                        g[row + i] = delta[o] * input[i];
                    }
                    g[b_entry.offset + o] = delta[o];
                }
            }
            if l == 0 {
                break;
            }
            // delta for the previous layer: (W^T delta) .* act'(z_prev)
            let w = self
                .params
                .slice(&format!("l{l}.w"))
                .expect("layout entry exists");
            let prev = &self.layers[l - 1];
            let z_prev = &trace.preactivations[l - 1];
            let mut next_delta = vec![0.0; layer.in_dim];
            for (i, nd) in next_delta.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (o, d) in delta.iter().enumerate() {
                    acc += w[o * layer.in_dim + i] * d;
                }
                *nd = acc * prev.activation.derivative(z_prev[i]);
            }
            delta = next_delta;
        }
        Ok(grad)
    }

    fn check_input(&self, state: &[f64]) -> Result<(), NnError> {
        if state.len() != self.input_dim() {
            return Err(NnError::InputShape {
                expected: self.input_dim(),
                got: state.len(),
            });
        }
        Ok(())
    }

    fn layer_forward(&self, idx: usize, layer: &LayerSpec, input: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let w = self
            .params
            .slice(&format!("l{idx}.w"))
            .expect("layout entry exists");
        let b = self
            .params
            .slice(&format!("l{idx}.b"))
            .expect("layout entry exists");
        let mut z = vec![0.0; layer.out_dim];
        for (o, zo) in z.iter_mut().enumerate() {
            let row = &w[o * layer.in_dim..(o + 1) * layer.in_dim];
            let mut acc = b[o];
            for (wi, xi) in row.iter().zip(input.iter()) {
                acc += wi * xi;
            }
            *zo = acc;
        }
        let a = z.iter().map(|&v| layer.activation.apply(v)).collect();
        (z, a)
    }
}

/// Recover the layer specs from a checkpoint layout produced by
/// [`QNetwork::layout_for`]: `l{i}.w` entries carry `[out_dim, in_dim]`,
/// hidden layers are rectified, the final layer is linear.
pub fn layers_from_layout(layout: &Layout) -> Result<Vec<LayerSpec>, NnError> {
    let mut dims = Vec::new();
    for i in 0.. {
        match layout.entry(&format!("l{i}.w")) {
            Some(e) if e.shape.len() == 2 => dims.push((e.shape[1], e.shape[0])),
            Some(e) => {
                return Err(NnError::InvalidLayout(format!(
                    "weight entry l{i}.w has shape {:?}",
                    e.shape
                )))
            }
            None => break,
        }
    }
    if dims.is_empty() {
        return Err(NnError::InvalidLayout("no layer entries".into()));
    }
    let last = dims.len() - 1;
    let layers: Vec<LayerSpec> = dims
        .iter()
        .enumerate()
        .map(|(i, &(in_dim, out_dim))| LayerSpec {
            in_dim,
            out_dim,
            activation: if i == last {
                Activation::Identity
            } else {
                Activation::Rectifier
            },
        })
        .collect();
    if QNetwork::layout_for(&layers)? != *layout {
        return Err(NnError::InvalidLayout(
            "layout is not a plain MLP layout".into(),
        ));
    }
    Ok(layers)
}

fn validate_layers(layers: &[LayerSpec]) -> Result<(), NnError> {
    if layers.is_empty() {
        return Err(NnError::BadArchitecture("no layers".into()));
    }
    for l in layers {
        if l.in_dim == 0 || l.out_dim == 0 {
            return Err(NnError::BadArchitecture("zero layer dimension".into()));
        }
    }
    for w in layers.windows(2) {
        if w[0].out_dim != w[1].in_dim {
            return Err(NnError::BadArchitecture(format!(
                "layer dims do not chain: {} -> {}",
                w[0].out_dim, w[1].in_dim
            )));
        }
    }
    for (i, l) in layers.iter().enumerate() {
        let is_last = i == layers.len() - 1;
        match (is_last, l.activation) {
            (true, Activation::Identity) | (false, Activation::Rectifier) => {}
            (true, _) => {
                return Err(NnError::BadArchitecture(
                    "output layer must be linear".into(),
                ))
            }
            (false, _) => {
                return Err(NnError::BadArchitecture(
                    "hidden layers must be rectified".into(),
                ))
            }
        }
    }
    Ok(())
}
