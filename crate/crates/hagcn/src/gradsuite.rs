//! The standing gradient audit: every differentiable operation, every
//! convolution order, both gate variants, and the assembled models, each
//! compared against central finite differences on its own scenario.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::graph::{adjacency_from_graph, pad_graph, Graph};
use crate::layers::{dconv_decode, ha_forward, ClippedPowers, GateVariant, HaConvLayer};
use crate::model::{ForwardCtx, Model};
use crate::pipelines::{reconstruction_target, reparameterize, vae_loss, VaeModel};
use crate::rng::seeded_rng;
use crate::tensor::{
    finite_difference_check, GradCheckReport, ParamKind, ParamSet, Tape, Tensor, TensorError,
    Value,
};

pub const EPSILON: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

type Scenario = fn() -> Result<GradCheckReport, TensorError>;

/// Runs every scenario and returns one report per name, in a stable order.
pub fn run_all() -> Result<Vec<GradCheckReport>, TensorError> {
    let scenarios: &[Scenario] = &[
        op_add,
        op_scale,
        op_add_scalar,
        op_exp,
        op_expm1,
        op_sigmoid,
        op_relu,
        op_softmax_rows,
        op_dropout,
        op_concat_cols,
        op_concat_rows,
        op_reshape,
        op_transpose,
        op_matmul,
        op_hadamard,
        op_add_row_bias,
        op_masked_mean_rows,
        op_sum_all,
        loss_cross_entropy,
        loss_mse,
        loss_bce,
        layer_gconv_k1,
        layer_gconv_k2,
        layer_gconv_k3,
        layer_ha_orders,
        layer_gate_prod,
        layer_gate_lin,
        layer_dconv,
        model_classifier,
        model_classifier_dropout,
        model_regressor_readout,
        model_vae_loss,
    ];
    scenarios.iter().map(|s| s()).collect()
}

pub fn all_passed(reports: &[GradCheckReport]) -> bool {
    reports.iter().all(|r| r.passed)
}

fn filled(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(rows, cols, data).expect("length matches shape")
}

/// Values with magnitude in `[lo, hi]` and random sign, for ops with a kink
/// at zero.
fn away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    let data = (0..rows * cols)
        .map(|_| {
            let magnitude = rng.gen_range(lo..hi);
            if rng.gen_bool(0.5) {
                magnitude
            } else {
                -magnitude
            }
        })
        .collect();
    Tensor::from_vec(rows, cols, data).expect("length matches shape")
}

/// Reduces a matrix output to a scalar through fixed random weights, so the
/// check probes a nontrivial combination of every output entry's adjoint.
fn probe(tape: &mut Tape, v: Value, weights: &Tensor) -> Result<Value, TensorError> {
    let w = tape.constant(weights.clone());
    let prod = tape.hadamard(v, w)?;
    Ok(tape.sum_all(prod))
}

/// Shifts every parameter entry by a random offset. Freshly built models sit
/// at special points (ones weights, zero biases) where dropped inputs can
/// park a ReLU argument exactly on its kink; checking at a generic point
/// avoids differentiating where no derivative exists.
fn jitter(params: &mut ParamSet, rng: &mut ChaCha8Rng) {
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        for v in params.get_mut(id).value.data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
}

fn check<F>(name: &str, params: &mut ParamSet, f: F) -> Result<GradCheckReport, TensorError>
where
    F: FnMut(&mut Tape, &ParamSet) -> Result<Value, TensorError>,
{
    finite_difference_check(name, params, f, EPSILON, TOLERANCE)
}

fn op_add() -> Result<GradCheckReport, TensorError> {
    let mut rng = seeded_rng(101);
    let mut params = ParamSet::new();
    let x = params.register("x", ParamKind::Weight, filled(&mut rng, 3, 4, -1.0, 1.0));
    let y = params.register("y", ParamKind::Weight, filled(&mut rng, 3, 4, -1.0, 1.0));
    let w = filled(&mut rng, 3, 4, -1.0, 1.0);
    check("op.add", &mut params, |tape, ps| {
        let a = tape.param(ps, x);
        let b = tape.param(ps, y);
        let s = tape.add(a, b)?;
        probe(tape, s, &w)
    })
}

fn op_scale() -> Result<GradCheckReport, TensorError> {
    let mut rng = seeded_rng(102);
    let mut params = ParamSet::new();
    let x = params.register("x", ParamKind::Weight, filled(&mut rng, 2, 5, -1.0, 1.0));
    let w = filled(&mut rng, 2, 5, -1.0, 1.0);
    check("op.scale", &mut params, |tape, ps| {
        let a = tape.param(ps, x);
        let s = tape.scale(a, -1.7);
        probe(tape, s, &w)
    })
}

fn op_add_scalar() -> Result<GradCheckReport, TensorError> {
    let mut rng = seeded_rng(103);
    let mut params = ParamSet::new();
    let x = params.register("x", ParamKind::Weight, filled(&mut rng, 2, 3, -1.0, 1.0));
    let w = filled(&mut rng, 2, 3, -1.0, 1.0);
    check("op.add_scalar", &mut params, |tape, ps| {
        let a = tape.param(ps, x);
        let s = tape.add_scalar(a, 0.6);
        probe(tape, s, &w)
    })
}

fn op_exp() -> Result<GradCheckReport, TensorError> {
    let mut rng = seeded_rng(104);
    let mut params = ParamSet::new();
    let x = params.register("x", ParamKind::Weight, filled(&mut rng, 3, 3, -1.0, 1.0));
    let w = filled(&mut rng, 3, 3, -1.0, 1.0);
    check("op.exp", &mut params, |tape, ps| {
        let a = tape.param(ps, x);
        let s = tape.exp(a);
        probe(tape, s, &w)
    })
}

fn op_expm1() -> Result<GradCheckReport, TensorError> {
    let mut rng = seeded_rng(105);
    let mut params = ParamSet::new();
    let x = params.register("x", ParamKind::Weight, filled(&mut rng, 3, 3, -1.0, 1.0));
    let w = filled(&mut rng, 3, 3, -1.0, 1.0);
    check("op.expm1", &mut params, |tape, ps| {
        let a = tape.param(ps, x);
        let s = tape.expm1(a);
        probe(tape, s, &w)
    })
}

fn op_sigmoid() -> Result<GradCheckReport, TensorError> {
    let mut rng = seeded_rng(106);
    let mut params = ParamSet::new();
    let x = params.register("x", ParamKind::Weight, filled(&mut rng, 3, 4, -3.0, 3.0));
    let w = filled(&mut rng, 3, 4, -1.0, 1.0);
    check("op.sigmoid", &mut params, |tape, ps| {
        let a = tape.param(ps, x);
        let s = tape.sigmoid(a);
        probe(tape, s, &w)
    })
}

fn op_relu() -> Result<GradCheckReport, TensorError> {
    let mut rng = seeded_rng(107);
    let mut params = ParamSet::new();
    let x = params.register(
        "x",
        ParamKind::Weight,
        away_from_zero(&mut rng, 3, 4, 0.2, 1.0),
    );
    let w = filled(&mut rng, 3, 4, -1.0, 1.0);
    check("op.relu", &mut params, |tape, ps| {
        let a = tape.param(ps, x);
        let s = tape.relu(a);
        probe(tape, s, &w)
    })
}

fn op_softmax_rows() -> Result<GradCheckReport, TensorError> {
    let mut rng = seeded_rng(108);
    let mut params = ParamSet::new();
    let x = params.register("x", ParamKind::Weight, filled(&mut rng, 3, 4, -2.0, 2.0));
    let w = filled(&mut rng, 3, 4, -1.0, 1.0);
    check("op.softmax_rows", &mut params, |tape, ps| {
        let a = tape.param(ps, x);
        let s = tape.softmax_rows(a);
        probe(tape, s, &w)
    })
}

fn op_dropout() -> Result<GradCheckReport, TensorError> {
    let mut rng = seeded_rng(109);
    let mut params = ParamSet::new();
    let x = params.register("x", ParamKind::Weight, filled(&mut rng, 4, 4, -1.0, 1.0));
    let w = filled(&mut rng, 4, 4, -1.0, 1.0);
    check("op.dropout", &mut params, |tape, ps| {
        let a = tape.param(ps, x);
        let s = tape.dropout(a, 0.4, 7, true)?;
        probe(tape, s, &w)
    })
}

fn op_concat_cols() -> Result<GradCheckReport, TensorError> {
    let mut rng = seeded_rng(110);
    let mut params = ParamSet::new();
    let x = params.register("x", ParamKind::Weight, filled(&mut rng, 3, 2, -1.0, 1.0));
    let y = params.register("y", ParamKind::Weight, filled(&mut rng, 3, 3, -1.0, 1.0));
    let w = filled(&mut rng, 3, 5, -1.0, 1.0);
    check("op.concat_cols", &mut params, |tape, ps| {
        let a = tape.param(ps, x);
        let b = tape.param(ps, y);
        let s = tape.concat_cols(a, b)?;
        probe(tape, s, &w)
    })
}

fn op_concat_rows() -> Result<GradCheckReport, TensorError> {
    let mut rng = seeded_rng(111);
    let mut params = ParamSet::new();
    let x = params.register("x", ParamKind::Weight, filled(&mut rng, 2, 3, -1.0, 1.0));
    let y = params.register("y", ParamKind::Weight, filled(&mut rng, 4, 3, -1.0, 1.0));
    let w = filled(&mut rng, 6, 3, -1.0, 1.0);
    check("op.concat_rows", &mut params, |tape, ps| {
        let a = tape.param(ps, x);
        let b = tape.param(ps, y);
        let s = tape.concat_rows(a, b)?;
        probe(tape, s, &w)
    })
}

fn op_reshape() -> Result<GradCheckReport, TensorError> {
    let mut rng = seeded_rng(112);
    let mut params = ParamSet::new();
    let x = params.register("x", ParamKind::Weight, filled(&mut rng, 3, 4, -1.0, 1.0));
    let w = filled(&mut rng, 2, 6, -1.0, 1.0);
    check("op.reshape", &mut params, |tape, ps| {
        let a = tape.param(ps, x);
        let s = tape.reshape(a, 2, 6)?;
        probe(tape, s, &w)
    })
}

fn op_transpose() -> Result<GradCheckReport, TensorError> {
    let mut rng = seeded_rng(113);
    let mut params = ParamSet::new();
    let x = params.register("x", ParamKind::Weight, filled(&mut rng, 3, 5, -1.0, 1.0));
    let w = filled(&mut rng, 5, 3, -1.0, 1.0);
    check("op.transpose", &mut params, |tape, ps| {
        let a = tape.param(ps, x);
        let s = tape.transpose(a);
        probe(tape, s, &w)
    })
}

fn op_matmul() -> Result<GradCheckReport, TensorError> {
    let mut rng = seeded_rng(114);
    let mut params = ParamSet::new();
    let x = params.register("x", ParamKind::Weight, filled(&mut rng, 3, 4, -1.0, 1.0));
    let y = params.register("y", ParamKind::Weight, filled(&mut rng, 4, 2, -1.0, 1.0));
    let w = filled(&mut rng, 3, 2, -1.0, 1.0);
    check("op.matmul", &mut params, |tape, ps| {
        let a = tape.param(ps, x);
        let b = tape.param(ps, y);
        let s = tape.matmul(a, b)?;
        probe(tape, s, &w)
    })
}

fn op_hadamard() -> Result<GradCheckReport, TensorError> {
    let mut rng = seeded_rng(115);
    let mut params = ParamSet::new();
    let x = params.register("x", ParamKind::Weight, filled(&mut rng, 4, 3, -1.0, 1.0));
    let y = params.register("y", ParamKind::Weight, filled(&mut rng, 4, 3, -1.0, 1.0));
    let w = filled(&mut rng, 4, 3, -1.0, 1.0);
    check("op.hadamard", &mut params, |tape, ps| {
        let a = tape.param(ps, x);
        let b = tape.param(ps, y);
        let s = tape.hadamard(a, b)?;
        probe(tape, s, &w)
    })
}

fn op_add_row_bias() -> Result<GradCheckReport, TensorError> {
    let mut rng = seeded_rng(116);
    let mut params = ParamSet::new();
    let x = params.register("x", ParamKind::Weight, filled(&mut rng, 4, 3, -1.0, 1.0));
    let b = params.register("b", ParamKind::Bias, filled(&mut rng, 1, 3, -1.0, 1.0));
    let w = filled(&mut rng, 4, 3, -1.0, 1.0);
    check("op.add_row_bias", &mut params, |tape, ps| {
        let a = tape.param(ps, x);
        let bias = tape.param(ps, b);
        let s = tape.add_row_bias(a, bias)?;
        probe(tape, s, &w)
    })
}

fn op_masked_mean_rows() -> Result<GradCheckReport, TensorError> {
    let mut rng = seeded_rng(117);
    let mut params = ParamSet::new();
    let x = params.register("x", ParamKind::Weight, filled(&mut rng, 5, 3, -1.0, 1.0));
    let w = filled(&mut rng, 1, 3, -1.0, 1.0);
    let mask = [1.0, 0.0, 1.0, 1.0, 0.0];
    check("op.masked_mean_rows", &mut params, move |tape, ps| {
        let a = tape.param(ps, x);
        let s = tape.masked_mean_rows(a, &mask)?;
        probe(tape, s, &w)
    })
}

fn op_sum_all() -> Result<GradCheckReport, TensorError> {
    let mut rng = seeded_rng(118);
    let mut params = ParamSet::new();
    let x = params.register("x", ParamKind::Weight, filled(&mut rng, 3, 3, -1.0, 1.0));
    check("op.sum_all", &mut params, |tape, ps| {
        let a = tape.param(ps, x);
        Ok(tape.sum_all(a))
    })
}

fn loss_cross_entropy() -> Result<GradCheckReport, TensorError> {
    let mut rng = seeded_rng(119);
    let mut params = ParamSet::new();
    let x = params.register("logits", ParamKind::Weight, filled(&mut rng, 4, 3, -2.0, 2.0));
    let labels = [0usize, 2, 1, 2];
    let mask = [1.0, 1.0, 0.0, 1.0];
    check("loss.cross_entropy", &mut params, move |tape, ps| {
        let a = tape.param(ps, x);
        tape.cross_entropy_loss(a, &labels, &mask)
    })
}

fn loss_mse() -> Result<GradCheckReport, TensorError> {
    let mut rng = seeded_rng(120);
    let mut params = ParamSet::new();
    let x = params.register("pred", ParamKind::Weight, filled(&mut rng, 4, 2, -1.0, 1.0));
    let target = filled(&mut rng, 4, 2, -1.0, 1.0);
    let mask = [1.0, 0.0, 1.0, 1.0];
    check("loss.mse", &mut params, move |tape, ps| {
        let a = tape.param(ps, x);
        tape.mse_loss(a, &target, &mask)
    })
}

fn loss_bce() -> Result<GradCheckReport, TensorError> {
    let mut rng = seeded_rng(121);
    let mut params = ParamSet::new();
    let x = params.register("x", ParamKind::Weight, filled(&mut rng, 3, 3, -2.0, 2.0));
    let target_data: Vec<f64> = (0..9).map(|_| f64::from(rng.gen_bool(0.5))).collect();
    let target = Tensor::from_vec(3, 3, target_data).expect("length matches shape");
    check("loss.bce", &mut params, move |tape, ps| {
        let a = tape.param(ps, x);
        let probs = tape.sigmoid(a);
        tape.bce_sum_loss(probs, &target)
    })
}

fn scenario_graph() -> Graph {
    Graph::undirected(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (1, 3)]).expect("valid edge list")
}

fn gconv_scenario(
    name: &'static str,
    orders: &[usize],
    adaptive: Option<GateVariant>,
    seed: u64,
) -> Result<GradCheckReport, TensorError> {
    let graph = scenario_graph();
    let a = adjacency_from_graph(&graph);
    let powers = ClippedPowers::compute(&a, orders).expect("orders are positive");
    let mut rng = seeded_rng(seed);
    let mut params = ParamSet::new();
    let x = params.register("x", ParamKind::Weight, filled(&mut rng, 5, 3, -1.0, 1.0));
    let layer = HaConvLayer::new(&mut params, "conv", orders, 5, 3, adaptive, &mut rng)
        .expect("valid layer shape");
    let w = filled(&mut rng, 5, 3 * orders.len(), -1.0, 1.0);
    check(name, &mut params, move |tape, ps| {
        let xv = tape.param(ps, x);
        let out = ha_forward(tape, ps, &layer, &powers, xv, None).expect("shapes line up");
        probe(tape, out, &w)
    })
}

fn layer_gconv_k1() -> Result<GradCheckReport, TensorError> {
    gconv_scenario("layer.gconv_k1", &[1], None, 131)
}

fn layer_gconv_k2() -> Result<GradCheckReport, TensorError> {
    gconv_scenario("layer.gconv_k2", &[2], None, 132)
}

fn layer_gconv_k3() -> Result<GradCheckReport, TensorError> {
    gconv_scenario("layer.gconv_k3", &[3], None, 133)
}

fn layer_ha_orders() -> Result<GradCheckReport, TensorError> {
    gconv_scenario("layer.ha_orders123", &[1, 2, 3], None, 134)
}

fn layer_gate_prod() -> Result<GradCheckReport, TensorError> {
    gconv_scenario("layer.gate_prod", &[1, 2], Some(GateVariant::Prod), 135)
}

fn layer_gate_lin() -> Result<GradCheckReport, TensorError> {
    gconv_scenario("layer.gate_lin", &[1, 2], Some(GateVariant::Lin), 136)
}

fn layer_dconv() -> Result<GradCheckReport, TensorError> {
    let mut rng = seeded_rng(137);
    let mut params = ParamSet::new();
    let h = params.register("h", ParamKind::Weight, filled(&mut rng, 4, 3, -1.0, 1.0));
    let w = filled(&mut rng, 4, 4, -1.0, 1.0);
    check("layer.dconv", &mut params, move |tape, ps| {
        let hv = tape.param(ps, h);
        let probs = dconv_decode(tape, hv).expect("shapes line up");
        probe(tape, probs, &w)
    })
}

fn classifier_scenario(
    name: &'static str,
    arch: &str,
    dropout_rate: f64,
) -> Result<GradCheckReport, TensorError> {
    let graph = scenario_graph();
    let a = adjacency_from_graph(&graph);
    let spec = arch.parse().expect("valid architecture");
    let mut model = Model::build(spec, 5, 3, GateVariant::Lin, 17).expect("buildable model");
    let powers = model.powers_for(&a).expect("orders are positive");
    let mut rng = seeded_rng(140);
    let features = filled(&mut rng, 5, 3, -1.0, 1.0);
    let labels = [0usize, 2, 1, 3, 1];
    let mask = [1.0, 1.0, 0.0, 1.0, 1.0];
    let mut params = std::mem::take(&mut model.params);
    jitter(&mut params, &mut rng);
    check(name, &mut params, move |tape, ps| {
        let x = tape.constant(features.clone());
        let mut ctx = ForwardCtx {
            powers: &powers,
            training: dropout_rate > 0.0,
            dropout_rate,
            dropout_seed: 5,
            gate_sink: None,
        };
        let logits = model
            .forward_with(ps, tape, x, &mut ctx)
            .expect("forward is well-formed");
        tape.cross_entropy_loss(logits, &labels, &mask)
    })
}

fn model_classifier() -> Result<GradCheckReport, TensorError> {
    classifier_scenario("model.classifier", "adp_gcn_{1,2}-ReLU-fc4-softmax", 0.0)
}

fn model_classifier_dropout() -> Result<GradCheckReport, TensorError> {
    classifier_scenario(
        "model.classifier_dropout",
        "gcn_{1,2}-ReLU-fc4-softmax",
        0.3,
    )
}

fn model_regressor_readout() -> Result<GradCheckReport, TensorError> {
    let graph = scenario_graph();
    let a = adjacency_from_graph(&graph);
    let spec = "gcn_{1}-fc1".parse().expect("valid architecture");
    let mut model = Model::build(spec, 5, 3, GateVariant::Lin, 19).expect("buildable model");
    let powers = model.powers_for(&a).expect("orders are positive");
    let mut rng = seeded_rng(141);
    let features = filled(&mut rng, 5, 3, -1.0, 1.0);
    let node_mask = [1.0, 1.0, 1.0, 1.0, 0.0];
    let target = Tensor::scalar(0.7);
    let mut params = std::mem::take(&mut model.params);
    jitter(&mut params, &mut rng);
    check("model.regressor_readout", &mut params, move |tape, ps| {
        let x = tape.constant(features.clone());
        let mut ctx = ForwardCtx::inference(&powers);
        let h = model
            .forward_with(ps, tape, x, &mut ctx)
            .expect("forward is well-formed");
        let pooled = tape.masked_mean_rows(h, &node_mask)?;
        tape.mse_loss(pooled, &target, &[1.0])
    })
}

fn model_vae_loss() -> Result<GradCheckReport, TensorError> {
    let graph = Graph::undirected(4, &[(0, 1), (1, 2), (2, 3)]).expect("valid edge list");
    let mut rng = seeded_rng(142);
    let features = filled(&mut rng, 4, 3, -1.0, 1.0);
    let padded = pad_graph(&graph, &features, 5).expect("capacity fits");
    let mut vae = VaeModel::build("gcn_{1}-fc3", 5, 3, GateVariant::Lin, 23)
        .expect("buildable model");
    let powers = vae
        .core
        .powers_for(&padded.adjacency)
        .expect("orders are positive");
    let target = reconstruction_target(&padded).expect("padded adjacency is square");
    let noise = filled(&mut rng, 1, 3, -1.0, 1.0);
    let mut params = std::mem::take(&mut vae.core.params);
    jitter(&mut params, &mut rng);
    check("model.vae_loss", &mut params, move |tape, ps| {
        let (mu, log_var) = vae
            .encode_explicit(ps, tape, &padded, &powers)
            .expect("encoder is well-formed");
        let z = reparameterize(tape, mu, log_var, &noise)?;
        let probs = vae
            .decode_explicit(ps, tape, z)
            .expect("decoder is well-formed");
        let parts = vae_loss(tape, probs, &target, mu, log_var)?;
        Ok(parts.total)
    })
}
