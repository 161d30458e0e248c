//! Model assembly and training plumbing.
//!
//! A parsed architecture becomes a stack of instantiated layers over one
//! shared parameter set. Forward runs on a tape; a trailing `softmax` token
//! is left to the loss (cross-entropy works on logits and argmax is
//! unchanged), while a mid-stack `softmax` is applied literally.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arch::{ArchError, ArchitectureSpec, LayerDesc};
use crate::graph::{AdjacencyMatrix, GraphError};
use crate::layers::{
    dconv_decode, glorot_uniform, ha_forward, ClippedPowers, GateVariant, HaConvLayer, LayerError,
};
use crate::optim::{Optimizer, OptimizerKind};
use crate::rng::{derive_seed, seeded_rng, DOMAIN_DROPOUT, DOMAIN_INIT};
use crate::tensor::{ParamId, ParamKind, ParamSet, Tape, Tensor, TensorError, Value};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("architecture needs at least one layer")]
    EmptySpec,
    #[error("model output width is {found} but the task needs {expected}: {hint}")]
    OutputWidth {
        found: usize,
        expected: usize,
        hint: String,
    },
    #[error("training config: {0}")]
    BadConfig(String),
    #[error("loss became non-finite ({value})")]
    NonFiniteLoss { value: f64 },
    #[error("checkpoint parameter `{name}`: {problem}")]
    CheckpointParam { name: String, problem: String },
    #[error("checkpoint holds {found} parameters, the architecture has {expected}")]
    CheckpointCount { found: usize, expected: usize },
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Hyperparameters shared by every training pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub dropout_rate: f64,
    pub l2_coefficient: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            learning_rate: 0.01,
            epochs: 200,
            dropout_rate: 0.0,
            l2_coefficient: 0.0,
            seed: 0,
            optimizer: OptimizerKind::adam_default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.epochs == 0 {
            return Err(ModelError::BadConfig("epochs must be >= 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(ModelError::BadConfig(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(ModelError::BadConfig(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if !self.l2_coefficient.is_finite() || self.l2_coefficient < 0.0 {
            return Err(ModelError::BadConfig(format!(
                "l2_coefficient must be finite and >= 0, got {}",
                self.l2_coefficient
            )));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> Optimizer {
        Optimizer::new(self.optimizer, self.learning_rate)
    }
}

enum LayerInst {
    Gconv(HaConvLayer),
    Fc { w: ParamId, b: ParamId },
    Relu,
    Softmax,
    Dconv,
}

/// A gate matrix observed during a forward pass, tagged with the layer index
/// and convolution order it belongs to.
pub struct GateCapture {
    pub layer: usize,
    pub order: usize,
    pub gate: Tensor,
}

/// Per-call forward settings. `dropout_seed` should already identify the
/// epoch or batch; the layer index is folded in internally.
pub struct ForwardCtx<'a> {
    pub powers: &'a ClippedPowers,
    pub training: bool,
    pub dropout_rate: f64,
    pub dropout_seed: u64,
    pub gate_sink: Option<&'a mut Vec<GateCapture>>,
}

impl<'a> ForwardCtx<'a> {
    pub fn inference(powers: &'a ClippedPowers) -> Self {
        ForwardCtx {
            powers,
            training: false,
            dropout_rate: 0.0,
            dropout_seed: 0,
            gate_sink: None,
        }
    }
}

pub struct Model {
    spec: ArchitectureSpec,
    gate: GateVariant,
    layers: Vec<LayerInst>,
    pub params: ParamSet,
    n: usize,
    m_in: usize,
    out_width: usize,
}

impl Model {
    /// Instantiates the stack for graphs of up to `n` nodes with `m_in` input
    /// features. Convolution weights start at all ones and biases at zero, so
    /// an untrained gconv is plain k-hop aggregation; fully connected and
    /// gate parameters draw from Glorot uniform.
    pub fn build(
        spec: ArchitectureSpec,
        n: usize,
        m_in: usize,
        gate: GateVariant,
        seed: u64,
    ) -> Result<Self, ModelError> {
        if spec.layers().is_empty() {
            return Err(ModelError::EmptySpec);
        }
        let mut params = ParamSet::new();
        let mut rng = seeded_rng(derive_seed(seed, DOMAIN_INIT, 0));
        let mut width = m_in;
        let mut layers = Vec::new();
        for (i, desc) in spec.layers().iter().enumerate() {
            match desc {
                LayerDesc::Gconv { orders, adaptive } => {
                    let conv = HaConvLayer::new(
                        &mut params,
                        &format!("layer{i}"),
                        orders,
                        n,
                        width,
                        adaptive.then_some(gate),
                        &mut rng,
                    )?;
                    width = conv.output_width();
                    layers.push(LayerInst::Gconv(conv));
                }
                LayerDesc::Fc { width: out } => {
                    let w = params.register(
                        format!("layer{i}.w"),
                        ParamKind::Weight,
                        glorot_uniform(&mut rng, width, *out),
                    );
                    let b = params.register(
                        format!("layer{i}.b"),
                        ParamKind::Bias,
                        Tensor::zeros(1, *out),
                    );
                    layers.push(LayerInst::Fc { w, b });
                    width = *out;
                }
                LayerDesc::Relu => layers.push(LayerInst::Relu),
                LayerDesc::Softmax => layers.push(LayerInst::Softmax),
                LayerDesc::Dconv => {
                    layers.push(LayerInst::Dconv);
                    width = n;
                }
            }
        }
        Ok(Model {
            spec,
            gate,
            layers,
            params,
            n,
            m_in,
            out_width: width,
        })
    }

    pub fn spec(&self) -> &ArchitectureSpec {
        &self.spec
    }

    pub fn gate(&self) -> GateVariant {
        self.gate
    }

    pub fn capacity(&self) -> usize {
        self.n
    }

    pub fn input_width(&self) -> usize {
        self.m_in
    }

    pub fn output_width(&self) -> usize {
        self.out_width
    }

    /// Every convolution order used anywhere in the stack, ascending.
    pub fn required_orders(&self) -> Vec<usize> {
        let mut ks: Vec<usize> = self
            .layers
            .iter()
            .filter_map(|l| match l {
                LayerInst::Gconv(conv) => Some(conv.orders()),
                _ => None,
            })
            .flatten()
            .copied()
            .collect();
        ks.sort_unstable();
        ks.dedup();
        ks
    }

    pub fn powers_for(&self, a: &AdjacencyMatrix) -> Result<ClippedPowers, GraphError> {
        ClippedPowers::compute(a, &self.required_orders())
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        x: Value,
        ctx: &mut ForwardCtx,
    ) -> Result<Value, ModelError> {
        self.forward_with(&self.params, tape, x, ctx)
    }

    /// Like [`Model::forward`] but reads parameters from an external set,
    /// which must have been created by this model's constructor. Gradient
    /// checking uses this to evaluate the same program under perturbed
    /// parameters.
    pub fn forward_with(
        &self,
        params: &ParamSet,
        tape: &mut Tape,
        x: Value,
        ctx: &mut ForwardCtx,
    ) -> Result<Value, ModelError> {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerInst::Gconv(conv) => {
                    h = self.dropout_before(tape, h, i, ctx)?;
                    let mut captured = ctx.gate_sink.as_ref().map(|_| Vec::new());
                    h = ha_forward(tape, params, conv, ctx.powers, h, captured.as_mut())?;
                    if let (Some(sink), Some(captured)) = (ctx.gate_sink.as_deref_mut(), captured)
                    {
                        for (order, gate) in captured {
                            sink.push(GateCapture {
                                layer: i,
                                order,
                                gate,
                            });
                        }
                    }
                }
                LayerInst::Fc { w, b } => {
                    h = self.dropout_before(tape, h, i, ctx)?;
                    let wv = tape.param(params, *w);
                    let bv = tape.param(params, *b);
                    let prod = tape.matmul(h, wv)?;
                    h = tape.add_row_bias(prod, bv)?;
                }
                LayerInst::Relu => h = tape.relu(h),
                LayerInst::Softmax => {
                    if i != last {
                        h = tape.softmax_rows(h);
                    }
                }
                LayerInst::Dconv => h = dconv_decode(tape, h)?,
            }
        }
        Ok(h)
    }

    fn dropout_before(
        &self,
        tape: &mut Tape,
        h: Value,
        layer_index: usize,
        ctx: &ForwardCtx,
    ) -> Result<Value, ModelError> {
        if !ctx.training || ctx.dropout_rate == 0.0 {
            return Ok(h);
        }
        let seed = derive_seed(ctx.dropout_seed, DOMAIN_DROPOUT, layer_index as u64);
        Ok(tape.dropout(h, ctx.dropout_rate, seed, true)?)
    }

    pub fn to_state(&self) -> ModelState {
        ModelState {
            arch: self.spec.to_string(),
            n: self.n,
            m_in: self.m_in,
            gate: self.gate,
            params: self
                .params
                .iter()
                .map(|(_, p)| SavedParam {
                    name: p.name.clone(),
                    kind: p.kind,
                    rows: p.value.rows(),
                    cols: p.value.cols(),
                    data: p.value.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_state(state: &ModelState) -> Result<Self, ModelError> {
        let spec = ArchitectureSpec::parse(&state.arch)?;
        let mut model = Model::build(spec, state.n, state.m_in, state.gate, 0)?;
        fill_params(&mut model.params, &state.params)?;
        Ok(model)
    }
}

/// Overwrites every parameter in `params` from the saved list, matching by
/// name and validating shapes. The two sets must cover the same names.
pub fn fill_params(params: &mut ParamSet, saved: &[SavedParam]) -> Result<(), ModelError> {
    if saved.len() != params.len() {
        return Err(ModelError::CheckpointCount {
            found: saved.len(),
            expected: params.len(),
        });
    }
    for entry in saved {
        let id = params
            .by_name(&entry.name)
            .ok_or_else(|| ModelError::CheckpointParam {
                name: entry.name.clone(),
                problem: "not present in this architecture".into(),
            })?;
        let p = params.get_mut(id);
        if (p.value.rows(), p.value.cols()) != (entry.rows, entry.cols) {
            return Err(ModelError::CheckpointParam {
                name: entry.name.clone(),
                problem: format!(
                    "saved shape {}x{} does not match expected {}x{}",
                    entry.rows,
                    entry.cols,
                    p.value.rows(),
                    p.value.cols()
                ),
            });
        }
        p.value = Tensor::from_vec(entry.rows, entry.cols, entry.data.clone()).map_err(|e| {
            ModelError::CheckpointParam {
                name: entry.name.clone(),
                problem: e.to_string(),
            }
        })?;
    }
    Ok(())
}

/// Serializable snapshot of a model: architecture, sizes, and every
/// parameter tensor by name.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelState {
    pub arch: String,
    pub n: usize,
    pub m_in: usize,
    pub gate: GateVariant,
    pub params: Vec<SavedParam>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SavedParam {
    pub name: String,
    pub kind: ParamKind,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// One optimization step: evaluate the task loss, add the L2 penalty over
/// weight-kind parameters, backpropagate, and update. Returns the pre-update
/// total loss.
pub fn train_step<F>(
    model: &mut Model,
    optimizer: &mut Optimizer,
    l2_coefficient: f64,
    build_loss: F,
) -> Result<f64, ModelError>
where
    F: FnOnce(&mut Tape, &Model) -> Result<Value, ModelError>,
{
    let mut tape = Tape::new();
    let task_loss = build_loss(&mut tape, model)?;
    let loss = if l2_coefficient > 0.0 {
        let weight_ids: Vec<ParamId> = model
            .params
            .iter()
            .filter(|(_, p)| p.kind == ParamKind::Weight)
            .map(|(id, _)| id)
            .collect();
        let mut total = task_loss;
        for id in weight_ids {
            let w = tape.param(&model.params, id);
            let sq = tape.hadamard(w, w)?;
            let sum = tape.sum_all(sq);
            let scaled = tape.scale(sum, l2_coefficient);
            total = tape.add(total, scaled)?;
        }
        total
    } else {
        task_loss
    };
    let loss_value = tape.value(loss).get(0, 0);
    if !loss_value.is_finite() {
        return Err(ModelError::NonFiniteLoss { value: loss_value });
    }
    tape.backward(loss, &mut model.params)?;
    optimizer.step(&mut model.params);
    Ok(loss_value)
}

/// Fraction of masked rows whose argmax logit matches the label. Ties go to
/// the lowest class index.
pub fn accuracy(logits: &Tensor, labels: &[usize], mask: &[f64]) -> Result<f64, TensorError> {
    let rows = logits.rows();
    if labels.len() != rows {
        return Err(TensorError::LabelCount {
            op: "accuracy",
            found: labels.len(),
            expected: rows,
        });
    }
    if mask.len() != rows {
        return Err(TensorError::MaskLength {
            op: "accuracy",
            found: mask.len(),
            expected: rows,
        });
    }
    let mut selected = 0usize;
    let mut correct = 0usize;
    for i in 0..rows {
        if mask[i] == 0.0 {
            continue;
        }
        selected += 1;
        let row = logits.row(i);
        let mut best = 0usize;
        for (j, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = j;
            }
        }
        if best == labels[i] {
            correct += 1;
        }
    }
    if selected == 0 {
        return Err(TensorError::EmptyMask { op: "accuracy" });
    }
    Ok(correct as f64 / selected as f64)
}

/// Root mean squared error between two equally long prediction/target lists.
pub fn rmse(pred: &[f64], target: &[f64]) -> f64 {
    assert_eq!(pred.len(), target.len());
    assert!(!pred.is_empty());
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    (sum / pred.len() as f64).sqrt()
}
