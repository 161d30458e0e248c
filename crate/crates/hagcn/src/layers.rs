//! Graph convolution operators.
//!
//! The k-th order convolution keeps a full n x n weight matrix per order and
//! masks it with the clipped adjacency power, so weight (i, j) only acts when
//! a walk of length exactly k joins i and j:
//!
//! ```text
//! out_k = (W_k .* clip(A^k + I)) X + B_k
//! ```
//!
//! With `W_k` all ones and `B_k` zero this is plain k-hop aggregation; the
//! trained weights re-weight individual node pairs. The adaptive variants
//! squeeze a data-dependent gate in front of `W_k`:
//!
//! ```text
//! prod:  g = sigmoid(A~ X Q)          Q is m x n
//! lin:   g = sigmoid([A~ | X] Q)      Q is (n + m) x n
//! ```
//!
//! A full layer runs one block per order and concatenates the blocks in
//! ascending order, widening the features from m to m * (number of orders).

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{clipped_power, AdjacencyMatrix, GraphError};
use crate::tensor::{ParamId, ParamKind, ParamSet, Tape, Tensor, TensorError, Value};

#[derive(Debug, Error)]
pub enum LayerError {
    #[error("gconv orders must be distinct integers >= 1, got {orders:?}")]
    BadOrders { orders: Vec<usize> },
    #[error("no clipped power cached for order {k}")]
    MissingOrder { k: usize },
    #[error("input has {found} rows but the layer capacity is {expected} nodes")]
    NodeCount { found: usize, expected: usize },
    #[error("input has {found} columns but the layer expects {expected} features")]
    FeatureWidth { found: usize, expected: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Which adaptive gate feeds the weight mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateVariant {
    /// `sigmoid(A~ X Q)`.
    Prod,
    /// `sigmoid([A~ | X] Q)`.
    Lin,
}

/// Uniform Glorot initialization: U(-a, a) with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let mut t = Tensor::zeros(rows, cols);
    for v in t.data_mut() {
        *v = rng.gen_range(-limit..=limit);
    }
    t
}

/// Clipped adjacency powers of one graph, cached per order. Every layer of a
/// model sharing the same order reuses the same matrix.
#[derive(Clone, Debug)]
pub struct ClippedPowers {
    entries: Vec<(usize, Tensor)>,
}

impl ClippedPowers {
    /// For stacks without gconv layers, which never look powers up.
    pub fn empty() -> Self {
        ClippedPowers {
            entries: Vec::new(),
        }
    }

    pub fn compute(a: &AdjacencyMatrix, orders: &[usize]) -> Result<Self, GraphError> {
        let mut ks: Vec<usize> = orders.to_vec();
        ks.sort_unstable();
        ks.dedup();
        let mut entries = Vec::with_capacity(ks.len());
        for k in ks {
            entries.push((k, clipped_power(a, k)?.to_tensor()));
        }
        Ok(ClippedPowers { entries })
    }

    pub fn get(&self, k: usize) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|(order, _)| *order == k)
            .map(|(_, t)| t)
    }

    pub fn orders(&self) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().map(|(k, _)| *k)
    }
}

/// Plain feature propagation `A X`, the weightless baseline aggregator.
pub fn fp_forward(tape: &mut Tape, a: &AdjacencyMatrix, x: Value) -> Result<Value, TensorError> {
    let av = tape.constant(a.to_tensor());
    tape.matmul(av, x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

/// First-order convolution with a shared feature transform: `act(A X W)`.
pub fn node_gcn_forward(
    tape: &mut Tape,
    a: &AdjacencyMatrix,
    x: Value,
    w: Value,
    activation: Activation,
) -> Result<Value, TensorError> {
    let av = tape.constant(a.to_tensor());
    let ax = tape.matmul(av, x)?;
    let pre = tape.matmul(ax, w)?;
    Ok(match activation {
        Activation::Identity => pre,
        Activation::Relu => tape.relu(pre),
        Activation::Sigmoid => tape.sigmoid(pre),
    })
}

/// One masked convolution block: `(w .* a_tilde) x + b`.
pub fn gconv_forward(
    tape: &mut Tape,
    a_tilde: Value,
    x: Value,
    w: Value,
    b: Value,
) -> Result<Value, TensorError> {
    let masked = tape.hadamard(w, a_tilde)?;
    let aggregated = tape.matmul(masked, x)?;
    tape.add(aggregated, b)
}

/// The gate matrix for one order. Entries are sigmoid outputs, so they lie
/// strictly inside (0, 1); with `q = 0` every entry is exactly 0.5.
pub fn adaptive_gate(
    tape: &mut Tape,
    variant: GateVariant,
    a_tilde: Value,
    x: Value,
    q: Value,
) -> Result<Value, TensorError> {
    let pre = match variant {
        GateVariant::Prod => {
            let ax = tape.matmul(a_tilde, x)?;
            tape.matmul(ax, q)?
        }
        GateVariant::Lin => {
            let cat = tape.concat_cols(a_tilde, x)?;
            tape.matmul(cat, q)?
        }
    };
    Ok(tape.sigmoid(pre))
}

/// A multi-order convolution layer: per-order weight, bias, and (when
/// adaptive) gate parameters, all sized for a fixed node capacity.
#[derive(Clone, Debug)]
pub struct HaConvLayer {
    orders: Vec<usize>,
    n: usize,
    m_in: usize,
    adaptive: Option<GateVariant>,
    weights: Vec<ParamId>,
    biases: Vec<ParamId>,
    gates: Vec<ParamId>,
}

impl HaConvLayer {
    /// Registers parameters under `prefix` and returns the layer. Weights
    /// start at all ones (plain aggregation), biases at zero, gates at
    /// Glorot uniform.
    pub fn new(
        params: &mut ParamSet,
        prefix: &str,
        orders: &[usize],
        n: usize,
        m_in: usize,
        adaptive: Option<GateVariant>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, LayerError> {
        let mut sorted = orders.to_vec();
        sorted.sort_unstable();
        let distinct = sorted.windows(2).all(|w| w[0] != w[1]);
        if sorted.is_empty() || sorted[0] == 0 || !distinct {
            return Err(LayerError::BadOrders {
                orders: orders.to_vec(),
            });
        }
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut gates = Vec::new();
        for &k in &sorted {
            weights.push(params.register(
                format!("{prefix}.w{k}"),
                ParamKind::Weight,
                Tensor::filled(n, n, 1.0),
            ));
            biases.push(params.register(
                format!("{prefix}.b{k}"),
                ParamKind::Bias,
                Tensor::zeros(n, m_in),
            ));
            if let Some(variant) = adaptive {
                let rows = match variant {
                    GateVariant::Prod => m_in,
                    GateVariant::Lin => n + m_in,
                };
                gates.push(params.register(
                    format!("{prefix}.q{k}"),
                    ParamKind::Weight,
                    glorot_uniform(rng, rows, n),
                ));
            }
        }
        Ok(HaConvLayer {
            orders: sorted,
            n,
            m_in,
            adaptive,
            weights,
            biases,
            gates,
        })
    }

    pub fn orders(&self) -> &[usize] {
        &self.orders
    }

    pub fn capacity(&self) -> usize {
        self.n
    }

    pub fn input_width(&self) -> usize {
        self.m_in
    }

    pub fn output_width(&self) -> usize {
        self.m_in * self.orders.len()
    }

    pub fn adaptive(&self) -> Option<GateVariant> {
        self.adaptive
    }

    pub fn weight_id(&self, idx: usize) -> ParamId {
        self.weights[idx]
    }

    pub fn bias_id(&self, idx: usize) -> ParamId {
        self.biases[idx]
    }

    pub fn gate_id(&self, idx: usize) -> Option<ParamId> {
        self.gates.get(idx).copied()
    }
}

/// Runs a full layer: one gated block per order, concatenated ascending.
/// When `gate_sink` is given, the realized gate matrix for each order is
/// copied out for inspection.
pub fn ha_forward(
    tape: &mut Tape,
    params: &ParamSet,
    layer: &HaConvLayer,
    powers: &ClippedPowers,
    x: Value,
    mut gate_sink: Option<&mut Vec<(usize, Tensor)>>,
) -> Result<Value, LayerError> {
    let shape = tape.value(x).shape();
    if shape.0 != layer.n {
        return Err(LayerError::NodeCount {
            found: shape.0,
            expected: layer.n,
        });
    }
    if shape.1 != layer.m_in {
        return Err(LayerError::FeatureWidth {
            found: shape.1,
            expected: layer.m_in,
        });
    }
    let mut out: Option<Value> = None;
    for (idx, &k) in layer.orders.iter().enumerate() {
        let pattern = powers.get(k).ok_or(LayerError::MissingOrder { k })?;
        let a_tilde = tape.constant(pattern.clone());
        let w = tape.param(params, layer.weights[idx]);
        let b = tape.param(params, layer.biases[idx]);
        let w_eff = match layer.adaptive {
            Some(variant) => {
                let q = tape.param(params, layer.gates[idx]);
                let gate = adaptive_gate(tape, variant, a_tilde, x, q)?;
                if let Some(sink) = gate_sink.as_deref_mut() {
                    sink.push((k, tape.value(gate).clone()));
                }
                tape.hadamard(gate, w)?
            }
            None => w,
        };
        let block = gconv_forward(tape, a_tilde, x, w_eff, b)?;
        out = Some(match out {
            Some(acc) => tape.concat_cols(acc, block)?,
            None => block,
        });
    }
    Ok(out.expect("orders are nonempty"))
}

/// Inner-product edge decoder: `sigmoid(H H^T)`, an n x n matrix of edge
/// probabilities. Symmetric by construction.
pub fn dconv_decode(tape: &mut Tape, h: Value) -> Result<Value, TensorError> {
    let ht = tape.transpose(h);
    let gram = tape.matmul(h, ht)?;
    Ok(tape.sigmoid(gram))
}
