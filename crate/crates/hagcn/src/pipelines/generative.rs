//! Variational autoencoder over graphs: a convolutional encoder pools each
//! graph to a latent code, and a dense decoder expands the code back into
//! node embeddings whose inner products give edge probabilities.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{GraphCollection, SplitMasks};
use crate::export::MetricsRow;
use crate::graph::{Graph, GraphError, PaddedGraph};
use crate::layers::{dconv_decode, glorot_uniform, ClippedPowers, GateVariant};
use crate::model::{fill_params, train_step, ForwardCtx, Model, ModelError, ModelState, TrainingConfig};
use crate::rng::{
    derive_seed, derive_seed2, seeded_rng, DOMAIN_DROPOUT, DOMAIN_INIT, DOMAIN_NOISE,
    DOMAIN_SAMPLE, DOMAIN_SHUFFLE, DOMAIN_SPLIT,
};
use crate::tensor::{ParamId, ParamKind, Tape, Tensor, TensorError, Value};

use super::graph::{pad_collection, GRAPH_BATCH};
use super::{split_shuffled, PipelineError};

/// Encoder used when no architecture is given: three convolution orders,
/// then two dense layers down to the latent width.
pub const DEFAULT_ENCODER_ARCH: &str = "gcn_{1,2,3}-ReLU-fc64-ReLU-fc16";

/// Width of the decoder's dense hidden layer.
const DECODER_HIDDEN: usize = 64;

/// Parameter handles and dimensions shared by the encode/decode helpers.
/// Copyable so a training closure can hold it while the parameter set is
/// borrowed mutably elsewhere.
#[derive(Clone, Copy)]
struct Heads {
    mu_w: ParamId,
    mu_b: ParamId,
    lv_w: ParamId,
    lv_b: ParamId,
    dec1_w: ParamId,
    dec1_b: ParamId,
    dec2_w: ParamId,
    dec2_b: ParamId,
    expand_w: ParamId,
    expand_b: ParamId,
    n_max: usize,
    latent: usize,
}

pub struct VaeModel {
    /// Encoder stack. Its parameter set also carries the latent heads and
    /// the decoder, so one optimizer step covers everything.
    pub core: Model,
    heads: Heads,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct VaeState {
    pub core: ModelState,
}

impl VaeModel {
    /// Builds the encoder from `arch` and sizes the latent heads and decoder
    /// off its output width.
    pub fn build(
        arch: &str,
        n_max: usize,
        m_in: usize,
        gate: GateVariant,
        seed: u64,
    ) -> Result<VaeModel, ModelError> {
        let spec = arch.parse()?;
        let mut core = Model::build(spec, n_max, m_in, gate, seed)?;
        let latent = core.output_width();
        let mut rng = seeded_rng(derive_seed(seed, DOMAIN_INIT, 1));
        let dense = |params: &mut crate::tensor::ParamSet,
                         name: &str,
                         rows: usize,
                         cols: usize,
                         rng: &mut ChaCha8Rng| {
            let w = params.register(
                format!("{name}.w"),
                ParamKind::Weight,
                glorot_uniform(rng, rows, cols),
            );
            let b = params.register(format!("{name}.b"), ParamKind::Bias, Tensor::zeros(1, cols));
            (w, b)
        };
        let (mu_w, mu_b) = dense(&mut core.params, "mu", latent, latent, &mut rng);
        let (lv_w, lv_b) = dense(&mut core.params, "log_var", latent, latent, &mut rng);
        let (dec1_w, dec1_b) = dense(&mut core.params, "decoder.fc1", latent, latent, &mut rng);
        let (dec2_w, dec2_b) =
            dense(&mut core.params, "decoder.fc2", latent, DECODER_HIDDEN, &mut rng);
        let (expand_w, expand_b) = dense(
            &mut core.params,
            "decoder.expand",
            DECODER_HIDDEN,
            n_max * latent,
            &mut rng,
        );
        Ok(VaeModel {
            core,
            heads: Heads {
                mu_w,
                mu_b,
                lv_w,
                lv_b,
                dec1_w,
                dec1_b,
                dec2_w,
                dec2_b,
                expand_w,
                expand_b,
                n_max,
                latent,
            },
        })
    }

    pub fn n_max(&self) -> usize {
        self.heads.n_max
    }

    pub fn latent_dim(&self) -> usize {
        self.heads.latent
    }

    /// Posterior parameters for one padded graph, each `1 x latent`.
    pub fn encode(
        &self,
        tape: &mut Tape,
        padded: &PaddedGraph,
        powers: &ClippedPowers,
    ) -> Result<(Value, Value), ModelError> {
        encode_with(
            &self.core,
            &self.core.params,
            self.heads,
            tape,
            padded,
            powers,
            &EncodeSettings::inference(),
        )
    }

    /// Edge probability matrix (`n_max x n_max`) for a latent row `z`.
    pub fn decode(&self, tape: &mut Tape, z: Value) -> Result<Value, ModelError> {
        decode_with(&self.core.params, self.heads, tape, z)
    }

    /// [`VaeModel::encode`] against an external parameter set, for gradient
    /// checking.
    pub(crate) fn encode_explicit(
        &self,
        params: &crate::tensor::ParamSet,
        tape: &mut Tape,
        padded: &PaddedGraph,
        powers: &ClippedPowers,
    ) -> Result<(Value, Value), ModelError> {
        encode_with(
            &self.core,
            params,
            self.heads,
            tape,
            padded,
            powers,
            &EncodeSettings::inference(),
        )
    }

    /// [`VaeModel::decode`] against an external parameter set.
    pub(crate) fn decode_explicit(
        &self,
        params: &crate::tensor::ParamSet,
        tape: &mut Tape,
        z: Value,
    ) -> Result<Value, ModelError> {
        decode_with(params, self.heads, tape, z)
    }

    pub fn to_state(&self) -> VaeState {
        VaeState {
            core: self.core.to_state(),
        }
    }

    pub fn from_state(state: &VaeState) -> Result<VaeModel, ModelError> {
        let mut model = VaeModel::build(
            &state.core.arch,
            state.core.n,
            state.core.m_in,
            state.core.gate,
            0,
        )?;
        fill_params(&mut model.core.params, &state.core.params)?;
        Ok(model)
    }
}

struct EncodeSettings {
    training: bool,
    dropout_rate: f64,
    dropout_seed: u64,
}

impl EncodeSettings {
    fn inference() -> Self {
        EncodeSettings {
            training: false,
            dropout_rate: 0.0,
            dropout_seed: 0,
        }
    }
}

fn dense_forward(
    tape: &mut Tape,
    params: &crate::tensor::ParamSet,
    h: Value,
    w: ParamId,
    b: ParamId,
) -> Result<Value, TensorError> {
    let wv = tape.param(params, w);
    let bv = tape.param(params, b);
    let prod = tape.matmul(h, wv)?;
    tape.add_row_bias(prod, bv)
}

fn encode_with(
    core: &Model,
    params: &crate::tensor::ParamSet,
    heads: Heads,
    tape: &mut Tape,
    padded: &PaddedGraph,
    powers: &ClippedPowers,
    settings: &EncodeSettings,
) -> Result<(Value, Value), ModelError> {
    let x = tape.constant(padded.features.clone());
    let mut ctx = ForwardCtx {
        powers,
        training: settings.training,
        dropout_rate: settings.dropout_rate,
        dropout_seed: settings.dropout_seed,
        gate_sink: None,
    };
    let h = core.forward_with(params, tape, x, &mut ctx)?;
    let pooled = tape.masked_mean_rows(h, &padded.mask)?;
    let mu = dense_forward(tape, params, pooled, heads.mu_w, heads.mu_b)?;
    let log_var = dense_forward(tape, params, pooled, heads.lv_w, heads.lv_b)?;
    Ok((mu, log_var))
}

fn decode_with(
    params: &crate::tensor::ParamSet,
    heads: Heads,
    tape: &mut Tape,
    z: Value,
) -> Result<Value, ModelError> {
    let h = dense_forward(tape, params, z, heads.dec1_w, heads.dec1_b)?;
    let h = dense_forward(tape, params, h, heads.dec2_w, heads.dec2_b)?;
    let h = tape.relu(h);
    let h = dense_forward(tape, params, h, heads.expand_w, heads.expand_b)?;
    let points = tape.reshape(h, heads.n_max, heads.latent)?;
    Ok(dconv_decode(tape, points)?)
}

/// Draws `z = mu + exp(log_var / 2) * noise` with `noise` held constant, so
/// gradients flow to `mu` and `log_var` but not through the sample.
pub fn reparameterize(
    tape: &mut Tape,
    mu: Value,
    log_var: Value,
    noise: &Tensor,
) -> Result<Value, TensorError> {
    let half = tape.scale(log_var, 0.5);
    let std = tape.exp(half);
    let eps = tape.constant(noise.clone());
    let spread = tape.hadamard(std, eps)?;
    tape.add(mu, spread)
}

pub struct VaeLossParts {
    pub total: Value,
    pub reconstruction: Value,
    pub kl: Value,
}

/// Summed binary cross-entropy against the 0/1 `target` adjacency plus the
/// closed-form KL divergence to a standard normal. The KL term is written as
/// `(expm1(lv) - lv + mu^2) / 2`, which keeps it exactly nonnegative in
/// floating point.
pub fn vae_loss(
    tape: &mut Tape,
    probs: Value,
    target: &Tensor,
    mu: Value,
    log_var: Value,
) -> Result<VaeLossParts, TensorError> {
    let reconstruction = tape.bce_sum_loss(probs, target)?;
    let grown = tape.expm1(log_var);
    let neg = tape.scale(log_var, -1.0);
    let gap = tape.add(grown, neg)?;
    let musq = tape.hadamard(mu, mu)?;
    let body = tape.add(gap, musq)?;
    let summed = tape.sum_all(body);
    let kl = tape.scale(summed, 0.5);
    let total = tape.add(reconstruction, kl)?;
    Ok(VaeLossParts {
        total,
        reconstruction,
        kl,
    })
}

/// The decoder's training target for one padded graph: its adjacency with
/// ones forced onto the diagonal.
pub fn reconstruction_target(padded: &PaddedGraph) -> Result<Tensor, GraphError> {
    let powers = ClippedPowers::compute(&padded.adjacency, &[1])?;
    Ok(powers.get(1).expect("order 1 was requested").clone())
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn normal_row(rng: &mut ChaCha8Rng, width: usize) -> Tensor {
    let data = (0..width).map(|_| standard_normal(rng)).collect();
    Tensor::from_vec(1, width, data).expect("length matches width")
}

pub struct VaeTrainResult {
    pub model: VaeModel,
    /// Per-epoch mean total loss on each graph split, evaluated with
    /// `z = mu`; NaN where a split is empty.
    pub history: Vec<MetricsRow>,
    /// Mean training loss per epoch, before that epoch's updates settle.
    pub losses: Vec<f64>,
    /// KL term of every gradient step's every graph, in step order.
    pub kl_values: Vec<f64>,
    pub splits: SplitMasks,
}

/// Total/reconstruction/KL loss for one graph with the posterior mean as the
/// latent code.
pub fn evaluate_loss(
    model: &VaeModel,
    padded: &PaddedGraph,
    powers: &ClippedPowers,
    target: &Tensor,
) -> Result<(f64, f64, f64), PipelineError> {
    let mut tape = Tape::new();
    let (mu, log_var) = model.encode(&mut tape, padded, powers)?;
    let probs = model.decode(&mut tape, mu)?;
    let parts = vae_loss(&mut tape, probs, target, mu, log_var).map_err(ModelError::from)?;
    Ok((
        tape.value(parts.total).get(0, 0),
        tape.value(parts.reconstruction).get(0, 0),
        tape.value(parts.kl).get(0, 0),
    ))
}

pub fn train_vae(
    collection: &GraphCollection,
    arch: &str,
    gate: GateVariant,
    config: &TrainingConfig,
) -> Result<VaeTrainResult, PipelineError> {
    config.validate()?;
    let count = collection.graphs.len();
    if count == 0 {
        return Err(PipelineError::TooFewGraphs {
            found: 0,
            needed: 1,
        });
    }
    let mut model = VaeModel::build(
        arch,
        collection.n_max,
        collection.feature_width,
        gate,
        config.seed,
    )?;
    let padded = pad_collection(collection)?;
    let powers: Vec<ClippedPowers> = padded
        .iter()
        .map(|p| model.core.powers_for(&p.adjacency))
        .collect::<Result<_, _>>()?;
    let targets: Vec<Tensor> = padded
        .iter()
        .map(reconstruction_target)
        .collect::<Result<_, _>>()?;

    let splits = split_shuffled(
        count,
        (7.0, 1.5, 1.5),
        derive_seed(config.seed, DOMAIN_SPLIT, 2),
    )?;
    let heads = model.heads;
    let latent = heads.latent;

    let mut optimizer = config.optimizer();
    let mut history = Vec::with_capacity(config.epochs);
    let mut losses = Vec::with_capacity(config.epochs);
    let mut kl_values = Vec::new();
    for epoch in 1..=config.epochs {
        let mut order = splits.train.clone();
        let mut shuffle_rng = seeded_rng(derive_seed2(
            config.seed,
            DOMAIN_SHUFFLE,
            epoch as u64,
            1,
        ));
        order.shuffle(&mut shuffle_rng);

        let mut loss_sum = 0.0;
        for batch in order.chunks(GRAPH_BATCH) {
            let kl_log = &mut kl_values;
            let batch_loss = train_step(
                &mut model.core,
                &mut optimizer,
                config.l2_coefficient,
                |tape, core| {
                    let mut total = None;
                    for &g in batch {
                        let settings = EncodeSettings {
                            training: true,
                            dropout_rate: config.dropout_rate,
                            dropout_seed: derive_seed2(
                                config.seed,
                                DOMAIN_DROPOUT,
                                epoch as u64,
                                g as u64,
                            ),
                        };
                        let (mu, log_var) = encode_with(
                            core,
                            &core.params,
                            heads,
                            tape,
                            &padded[g],
                            &powers[g],
                            &settings,
                        )?;
                        let mut noise_rng = seeded_rng(derive_seed2(
                            config.seed,
                            DOMAIN_NOISE,
                            epoch as u64,
                            g as u64,
                        ));
                        let noise = normal_row(&mut noise_rng, latent);
                        let z = reparameterize(tape, mu, log_var, &noise)?;
                        let probs = decode_with(&core.params, heads, tape, z)?;
                        let parts = vae_loss(tape, probs, &targets[g], mu, log_var)?;
                        kl_log.push(tape.value(parts.kl).get(0, 0));
                        total = Some(match total {
                            None => parts.total,
                            Some(prev) => tape.add(prev, parts.total)?,
                        });
                    }
                    let total = total.expect("batches are never empty");
                    Ok(tape.scale(total, 1.0 / batch.len() as f64))
                },
            )
            .map_err(|source| PipelineError::Train { epoch, source })?;
            loss_sum += batch_loss * batch.len() as f64;
        }
        losses.push(loss_sum / order.len() as f64);

        let split_mean = |indices: &[usize]| -> Result<f64, PipelineError> {
            if indices.is_empty() {
                return Ok(f64::NAN);
            }
            let mut sum = 0.0;
            for &g in indices {
                let (total, _, _) = evaluate_loss(&model, &padded[g], &powers[g], &targets[g])?;
                sum += total;
            }
            Ok(sum / indices.len() as f64)
        };
        history.push(MetricsRow {
            epoch,
            train: split_mean(&splits.train)?,
            val: split_mean(&splits.val)?,
            test: split_mean(&splits.test)?,
        });
    }

    Ok(VaeTrainResult {
        model,
        history,
        losses,
        kl_values,
        splits,
    })
}

/// Decodes `count` standard-normal latent draws into graphs. Entries above
/// `threshold` become edges; the result is symmetrized, self-loops dropped,
/// and trailing isolated nodes cut, keeping at least one node.
pub fn sample_graphs(
    model: &VaeModel,
    count: usize,
    seed: u64,
    threshold: f64,
) -> Result<Vec<Graph>, PipelineError> {
    if !threshold.is_finite() {
        return Err(PipelineError::BadThreshold { value: threshold });
    }
    let mut graphs = Vec::with_capacity(count);
    for s in 0..count {
        let mut rng = seeded_rng(derive_seed2(seed, DOMAIN_SAMPLE, s as u64, 0));
        let noise = normal_row(&mut rng, model.heads.latent);
        let mut tape = Tape::new();
        let z = tape.constant(noise);
        let probs = model.decode(&mut tape, z)?;
        let probs = tape.value(probs);

        let n_max = model.heads.n_max;
        let mut edges = Vec::new();
        let mut last_active = 0usize;
        for i in 0..n_max {
            for j in (i + 1)..n_max {
                if probs.get(i, j) > threshold || probs.get(j, i) > threshold {
                    edges.push((i, j));
                    last_active = last_active.max(j);
                }
            }
        }
        graphs.push(Graph::undirected(last_active + 1, &edges)?);
    }
    Ok(graphs)
}

/// Area under the ROC curve for ranking a graph's true edges above its
/// non-edges by decoded probability, averaged over the given graphs. Graphs
/// with no edges or no non-edges are skipped; skipping all of them is an
/// error.
pub fn reconstruction_auc(
    model: &VaeModel,
    padded: &[PaddedGraph],
) -> Result<f64, PipelineError> {
    let mut sum = 0.0;
    let mut counted = 0usize;
    for p in padded {
        let powers = model.core.powers_for(&p.adjacency)?;
        let mut tape = Tape::new();
        let (mu, _) = model.encode(&mut tape, p, &powers)?;
        let probs = model.decode(&mut tape, mu)?;
        let probs = tape.value(probs);

        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for i in 0..p.valid_count {
            for j in (i + 1)..p.valid_count {
                if p.adjacency.get(i, j) != 0.0 {
                    pos.push(probs.get(i, j));
                } else {
                    neg.push(probs.get(i, j));
                }
            }
        }
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        sum += mann_whitney_auc(&pos, &neg);
        counted += 1;
    }
    if counted == 0 {
        return Err(PipelineError::NoAucGraphs);
    }
    Ok(sum / counted as f64)
}

/// Rank-based AUC with average ranks across ties.
fn mann_whitney_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut scored: Vec<(f64, bool)> = pos
        .iter()
        .map(|&s| (s, true))
        .chain(neg.iter().map(|&s| (s, false)))
        .collect();
    scored.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("probabilities are ordered"));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < scored.len() {
        let mut j = i;
        while j < scored.len() && scored[j].0 == scored[i].0 {
            j += 1;
        }
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for entry in &scored[i..j] {
            if entry.1 {
                rank_sum += avg_rank;
            }
        }
        i = j;
    }
    let np = pos.len() as f64;
    let nn = neg.len() as f64;
    (rank_sum - np * (np + 1.0) / 2.0) / (np * nn)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Dataset, SyntheticSpec};
    use crate::graph::pad_graph;
    use proptest::prelude::*;

    fn community_collection(count: usize, seed: u64) -> GraphCollection {
        match generate_synthetic(&SyntheticSpec::Communities { count }, seed).unwrap() {
            Dataset::Graphs(c) => c,
            Dataset::Node(_) => unreachable!(),
        }
    }

    fn tiny_model(seed: u64) -> VaeModel {
        VaeModel::build("gcn_{1}-fc4", 5, 3, GateVariant::Lin, seed).unwrap()
    }

    fn loss_parts_for(mu: Vec<f64>, log_var: Vec<f64>) -> (f64, f64, f64) {
        let dim = mu.len();
        let mut tape = Tape::new();
        let mu = tape.constant(Tensor::from_vec(1, dim, mu).unwrap());
        let lv = tape.constant(Tensor::from_vec(1, dim, log_var).unwrap());
        let probs = tape.constant(Tensor::from_vec(1, 1, vec![0.5]).unwrap());
        let target = Tensor::zeros(1, 1);
        let parts = vae_loss(&mut tape, probs, &target, mu, lv).unwrap();
        (
            tape.value(parts.total).get(0, 0),
            tape.value(parts.reconstruction).get(0, 0),
            tape.value(parts.kl).get(0, 0),
        )
    }

    #[test]
    fn standard_posterior_has_zero_kl() {
        let (total, recon, kl) = loss_parts_for(vec![0.0, 0.0], vec![0.0, 0.0]);
        assert_eq!(kl, 0.0);
        assert_eq!(total, recon);
        assert!((recon - 0.5f64.ln().abs()).abs() < 1e-12);
    }

    #[test]
    fn unit_mean_shift_costs_half() {
        let (_, _, kl) = loss_parts_for(vec![1.0], vec![0.0]);
        assert_eq!(kl, 0.5);
    }

    proptest! {
        #[test]
        fn kl_never_goes_negative(
            mu in proptest::collection::vec(-10.0f64..10.0, 1..6),
            lv in proptest::collection::vec(-10.0f64..10.0, 1..6),
        ) {
            let dim = mu.len().min(lv.len());
            let (_, _, kl) = loss_parts_for(mu[..dim].to_vec(), lv[..dim].to_vec());
            prop_assert!(kl >= 0.0);
        }
    }

    #[test]
    fn reparameterization_with_zero_noise_returns_the_mean() {
        let mut tape = Tape::new();
        let mu = tape.constant(Tensor::from_vec(1, 3, vec![0.3, -1.2, 7.0]).unwrap());
        let lv = tape.constant(Tensor::from_vec(1, 3, vec![0.0, 2.0, -3.0]).unwrap());
        let z = reparameterize(&mut tape, mu, lv, &Tensor::zeros(1, 3)).unwrap();
        assert_eq!(tape.value(z).data(), &[0.3, -1.2, 7.0]);
    }

    #[test]
    fn decoder_output_is_a_square_probability_matrix() {
        let model = tiny_model(3);
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::zeros(1, model.latent_dim()));
        let probs = model.decode(&mut tape, z).unwrap();
        let t = tape.value(probs);
        assert_eq!(t.shape(), (5, 5));
        assert!(t.data().iter().all(|&p| p > 0.0 && p < 1.0));
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(t.get(i, j).to_bits(), t.get(j, i).to_bits());
            }
        }
    }

    #[test]
    fn state_round_trip_preserves_decoding_bitwise() {
        let model = tiny_model(11);
        let restored = VaeModel::from_state(&model.to_state()).unwrap();
        let z = Tensor::from_vec(1, 4, vec![0.4, -0.2, 1.1, 0.0]).unwrap();

        let mut ta = Tape::new();
        let za = ta.constant(z.clone());
        let pa = model.decode(&mut ta, za).unwrap();
        let mut tb = Tape::new();
        let zb = tb.constant(z);
        let pb = restored.decode(&mut tb, zb).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(ta.value(pa)), bits(tb.value(pb)));
    }

    #[test]
    fn training_runs_and_keeps_kl_nonnegative() {
        let collection = community_collection(8, 2);
        let config = TrainingConfig {
            epochs: 6,
            ..TrainingConfig::default()
        };
        let result = train_vae(&collection, "gcn_{1}-fc4", GateVariant::Lin, &config).unwrap();
        assert_eq!(result.history.len(), 6);
        assert_eq!(result.kl_values.len(), 6 * result.splits.train.len());
        assert!(result.kl_values.iter().all(|&k| k >= 0.0));
        assert!(result.losses.iter().all(|l| l.is_finite()));
        assert!(
            result.losses.last().unwrap() < result.losses.first().unwrap(),
            "losses: {:?}",
            result.losses
        );
    }

    #[test]
    fn training_is_bitwise_reproducible() {
        let collection = community_collection(5, 4);
        let config = TrainingConfig {
            epochs: 3,
            ..TrainingConfig::default()
        };
        let a = train_vae(&collection, "gcn_{1}-fc4", GateVariant::Lin, &config).unwrap();
        let b = train_vae(&collection, "gcn_{1}-fc4", GateVariant::Lin, &config).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.kl_values, b.kl_values);
    }

    #[test]
    fn sampling_is_seeded_and_respects_the_graph_contract() {
        let model = tiny_model(7);
        let a = sample_graphs(&model, 4, 21, 0.5).unwrap();
        let b = sample_graphs(&model, 4, 21, 0.5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        for g in &a {
            let n = g.num_nodes();
            assert!(n >= 1);
            for (i, j) in g.edges() {
                assert_ne!(i, j);
            }
            if n > 1 {
                assert!(
                    g.edges().any(|(i, j)| i == n - 1 || j == n - 1),
                    "trailing node must touch an edge"
                );
            }
        }
        assert!(sample_graphs(&model, 0, 21, 0.5).unwrap().is_empty());
    }

    #[test]
    fn extreme_thresholds_shrink_samples_to_single_nodes() {
        let model = tiny_model(7);
        let graphs = sample_graphs(&model, 3, 5, 2.0).unwrap();
        assert!(graphs.iter().all(|g| g.num_nodes() == 1));
        assert!(matches!(
            sample_graphs(&model, 1, 5, f64::NAN),
            Err(PipelineError::BadThreshold { .. })
        ));
    }

    #[test]
    fn rank_auc_matches_hand_values() {
        assert_eq!(mann_whitney_auc(&[0.9, 0.8], &[0.1, 0.2]), 1.0);
        assert_eq!(mann_whitney_auc(&[0.1, 0.2], &[0.8, 0.9]), 0.0);
        assert_eq!(mann_whitney_auc(&[0.5, 0.5], &[0.5, 0.5]), 0.5);
        assert_eq!(mann_whitney_auc(&[0.9, 0.1], &[0.5]), 0.5);
    }

    #[test]
    fn auc_skips_degenerate_graphs_and_errors_when_none_remain() {
        let model = tiny_model(9);
        let complete = Graph::undirected(3, &[(0, 1), (0, 2), (1, 2)]).unwrap();
        let path = Graph::undirected(3, &[(0, 1), (1, 2)]).unwrap();
        let features = crate::data::identity_features(3, 3);
        let complete_pad = pad_graph(&complete, &features, 5).unwrap();
        let path_pad = pad_graph(&path, &features, 5).unwrap();

        let err = reconstruction_auc(&model, &[complete_pad.clone()]).unwrap_err();
        assert!(matches!(err, PipelineError::NoAucGraphs));

        let auc = reconstruction_auc(&model, &[complete_pad, path_pad]).unwrap();
        assert!((0.0..=1.0).contains(&auc));
    }
}
