//! Whole-graph regression: every graph is padded to the collection's node
//! capacity, run through the shared stack, and read out as the mean of its
//! valid rows' final scalars.

use rand::seq::SliceRandom;

use crate::data::{GraphCollection, SplitMasks};
use crate::export::MetricsRow;
use crate::layers::{ClippedPowers, GateVariant};
use crate::graph::{pad_graph, PaddedGraph};
use crate::model::{rmse, train_step, ForwardCtx, Model, ModelError, TrainingConfig};
use crate::rng::{derive_seed, derive_seed2, seeded_rng, DOMAIN_DROPOUT, DOMAIN_SHUFFLE, DOMAIN_SPLIT};
use crate::tensor::{Tape, Tensor};

use super::{split_shuffled, PipelineError};

/// Graphs per gradient step.
pub const GRAPH_BATCH: usize = 32;

pub struct GraphTrainResult {
    pub model: Model,
    /// Per-epoch RMSE on each graph split; NaN where a split is empty.
    pub history: Vec<MetricsRow>,
    /// Mean training MSE per epoch, before that epoch's updates settle.
    pub losses: Vec<f64>,
    pub splits: SplitMasks,
    /// RMSE of always predicting the training targets' mean, on the training
    /// split. The floor any useful model should beat.
    pub baseline_rmse: f64,
}

/// Pads every graph in the collection to its `n_max` capacity.
pub fn pad_collection(collection: &GraphCollection) -> Result<Vec<PaddedGraph>, PipelineError> {
    collection
        .graphs
        .iter()
        .map(|s| Ok(pad_graph(&s.graph, &s.features, collection.n_max)?))
        .collect()
}

/// Inference-mode scalar prediction for one padded graph.
pub fn graph_prediction(
    model: &Model,
    padded: &PaddedGraph,
    powers: &ClippedPowers,
) -> Result<f64, PipelineError> {
    let mut tape = Tape::new();
    let x = tape.constant(padded.features.clone());
    let mut ctx = ForwardCtx::inference(powers);
    let h = model.forward(&mut tape, x, &mut ctx)?;
    let pooled = tape.masked_mean_rows(h, &padded.mask).map_err(ModelError::from)?;
    Ok(tape.value(pooled).get(0, 0))
}

fn rmse_or_nan(pred: &[f64], target: &[f64], indices: &[usize]) -> f64 {
    if indices.is_empty() {
        return f64::NAN;
    }
    let p: Vec<f64> = indices.iter().map(|&i| pred[i]).collect();
    let t: Vec<f64> = indices.iter().map(|&i| target[i]).collect();
    rmse(&p, &t)
}

pub fn train_graph_regressor(
    collection: &GraphCollection,
    arch: &str,
    gate: GateVariant,
    config: &TrainingConfig,
) -> Result<GraphTrainResult, PipelineError> {
    config.validate()?;
    let count = collection.graphs.len();
    if count < 2 {
        return Err(PipelineError::TooFewGraphs {
            found: count,
            needed: 2,
        });
    }
    let mut targets = Vec::with_capacity(count);
    for (index, sample) in collection.graphs.iter().enumerate() {
        targets.push(
            sample
                .target
                .ok_or(PipelineError::MissingTarget { index })?,
        );
    }

    let spec = arch.parse().map_err(ModelError::from)?;
    let mut model = Model::build(
        spec,
        collection.n_max,
        collection.feature_width,
        gate,
        config.seed,
    )?;
    if model.output_width() != 1 {
        return Err(ModelError::OutputWidth {
            found: model.output_width(),
            expected: 1,
            hint: "regression needs a single output column per node; end the stack with fc1"
                .into(),
        }
        .into());
    }

    let padded = pad_collection(collection)?;
    let powers: Vec<ClippedPowers> = padded
        .iter()
        .map(|p| model.powers_for(&p.adjacency))
        .collect::<Result<_, _>>()?;

    let splits = split_shuffled(
        count,
        (7.0, 1.5, 1.5),
        derive_seed(config.seed, DOMAIN_SPLIT, 1),
    )?;
    let train_targets: Vec<f64> = splits.train.iter().map(|&i| targets[i]).collect();
    let train_mean = train_targets.iter().sum::<f64>() / train_targets.len() as f64;
    let baseline_rmse = rmse(&vec![train_mean; train_targets.len()], &train_targets);

    let mut optimizer = config.optimizer();
    let mut history = Vec::with_capacity(config.epochs);
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mut order = splits.train.clone();
        let mut shuffle_rng = seeded_rng(derive_seed2(
            config.seed,
            DOMAIN_SHUFFLE,
            epoch as u64,
            0,
        ));
        order.shuffle(&mut shuffle_rng);

        let mut squared_sum = 0.0;
        for batch in order.chunks(GRAPH_BATCH) {
            let batch_mse = train_step(
                &mut model,
                &mut optimizer,
                config.l2_coefficient,
                |tape, model| {
                    let mut preds = None;
                    for &g in batch {
                        let x = tape.constant(padded[g].features.clone());
                        let mut ctx = ForwardCtx {
                            powers: &powers[g],
                            training: true,
                            dropout_rate: config.dropout_rate,
                            dropout_seed: derive_seed2(
                                config.seed,
                                DOMAIN_DROPOUT,
                                epoch as u64,
                                g as u64,
                            ),
                            gate_sink: None,
                        };
                        let h = model.forward(tape, x, &mut ctx)?;
                        let pooled = tape.masked_mean_rows(h, &padded[g].mask)?;
                        preds = Some(match preds {
                            None => pooled,
                            Some(prev) => tape.concat_rows(prev, pooled)?,
                        });
                    }
                    let preds = preds.expect("batches are never empty");
                    let target = Tensor::from_vec(
                        batch.len(),
                        1,
                        batch.iter().map(|&g| targets[g]).collect(),
                    )?;
                    Ok(tape.mse_loss(preds, &target, &vec![1.0; batch.len()])?)
                },
            )
            .map_err(|source| PipelineError::Train { epoch, source })?;
            squared_sum += batch_mse * batch.len() as f64;
        }
        losses.push(squared_sum / order.len() as f64);

        let preds: Vec<f64> = padded
            .iter()
            .zip(&powers)
            .map(|(p, pw)| graph_prediction(&model, p, pw))
            .collect::<Result<_, _>>()?;
        history.push(MetricsRow {
            epoch,
            train: rmse_or_nan(&preds, &targets, &splits.train),
            val: rmse_or_nan(&preds, &targets, &splits.val),
            test: rmse_or_nan(&preds, &targets, &splits.test),
        });
    }

    Ok(GraphTrainResult {
        model,
        history,
        losses,
        splits,
        baseline_rmse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, identity_features, Dataset, GraphSample, SyntheticSpec};
    use crate::graph::Graph;

    fn constant_target_collection(count: usize, target: f64) -> GraphCollection {
        let graphs = (0..count)
            .map(|i| {
                let n = 3 + i % 2;
                let edges: Vec<(usize, usize)> = (0..n - 1).map(|j| (j, j + 1)).collect();
                GraphSample {
                    graph: Graph::undirected(n, &edges).unwrap(),
                    features: identity_features(n, 4),
                    target: Some(target),
                }
            })
            .collect();
        GraphCollection {
            graphs,
            n_max: 4,
            feature_width: 4,
        }
    }

    fn edge_count_collection(count: usize, seed: u64) -> GraphCollection {
        match generate_synthetic(&SyntheticSpec::EdgeCount { count, n_max: 6 }, seed).unwrap() {
            Dataset::Graphs(c) => c,
            Dataset::Node(_) => unreachable!(),
        }
    }

    #[test]
    fn constant_targets_are_fitted_to_near_zero_rmse() {
        let collection = constant_target_collection(10, 0.5);
        let config = TrainingConfig {
            learning_rate: 0.05,
            epochs: 80,
            ..TrainingConfig::default()
        };
        let result =
            train_graph_regressor(&collection, "gcn_{1}-fc1", GateVariant::Lin, &config).unwrap();
        let last = result.history.last().unwrap();
        assert!(last.train < 0.05, "train rmse: {}", last.train);
    }

    #[test]
    fn edge_count_training_beats_the_mean_baseline() {
        let collection = edge_count_collection(24, 7);
        let config = TrainingConfig {
            epochs: 40,
            ..TrainingConfig::default()
        };
        let result = train_graph_regressor(
            &collection,
            "gcn_{1,2}-ReLU-fc8-ReLU-fc1",
            GateVariant::Lin,
            &config,
        )
        .unwrap();
        let last = result.history.last().unwrap();
        assert!(
            last.train < result.baseline_rmse,
            "rmse {} vs baseline {}",
            last.train,
            result.baseline_rmse
        );
    }

    #[test]
    fn missing_targets_are_reported_by_position() {
        let mut collection = constant_target_collection(4, 1.0);
        collection.graphs[2].target = None;
        let err = train_graph_regressor(
            &collection,
            "gcn_{1}-fc1",
            GateVariant::Lin,
            &TrainingConfig::default(),
        )
        .err().unwrap();
        assert!(matches!(err, PipelineError::MissingTarget { index: 2 }));
    }

    #[test]
    fn a_single_graph_is_not_enough() {
        let mut collection = constant_target_collection(1, 1.0);
        collection.n_max = 3;
        let err = train_graph_regressor(
            &collection,
            "gcn_{1}-fc1",
            GateVariant::Lin,
            &TrainingConfig::default(),
        )
        .err().unwrap();
        assert!(matches!(
            err,
            PipelineError::TooFewGraphs { found: 1, needed: 2 }
        ));
    }

    #[test]
    fn two_graphs_train_with_empty_val_and_test_splits() {
        let collection = constant_target_collection(2, 1.0);
        let config = TrainingConfig {
            epochs: 2,
            ..TrainingConfig::default()
        };
        let result =
            train_graph_regressor(&collection, "gcn_{1}-fc1", GateVariant::Lin, &config).unwrap();
        assert_eq!(result.splits.train.len(), 2);
        assert!(result.history[0].val.is_nan());
        assert!(result.history[0].test.is_nan());
        assert!(result.history[0].train.is_finite());
    }

    #[test]
    fn wide_output_heads_are_rejected() {
        let collection = constant_target_collection(4, 1.0);
        let err = train_graph_regressor(
            &collection,
            "gcn_{1}-fc2",
            GateVariant::Lin,
            &TrainingConfig::default(),
        )
        .err().unwrap();
        assert!(matches!(
            err,
            PipelineError::Model(ModelError::OutputWidth {
                found: 2,
                expected: 1,
                ..
            })
        ));
    }

    #[test]
    fn padding_rows_never_reach_the_prediction() {
        let collection = edge_count_collection(6, 3);
        let config = TrainingConfig {
            epochs: 3,
            ..TrainingConfig::default()
        };
        let result = train_graph_regressor(
            &collection,
            "adp_gcn_{1,2}-fc1",
            GateVariant::Lin,
            &config,
        )
        .unwrap();

        let padded = pad_collection(&collection).unwrap();
        let small = padded
            .iter()
            .find(|p| p.valid_count < p.mask.len())
            .expect("generator produces at least one graph below capacity");
        let powers = result.model.powers_for(&small.adjacency).unwrap();
        let clean = graph_prediction(&result.model, small, &powers).unwrap();

        let mut junk = small.clone();
        for i in junk.valid_count..junk.mask.len() {
            for j in 0..junk.features.cols() {
                junk.features.set(i, j, 1e6 + (i * j) as f64);
            }
        }
        let poked = graph_prediction(&result.model, &junk, &powers).unwrap();
        assert_eq!(clean.to_bits(), poked.to_bits());
    }

    #[test]
    fn training_is_bitwise_reproducible() {
        let collection = edge_count_collection(8, 1);
        let config = TrainingConfig {
            epochs: 4,
            ..TrainingConfig::default()
        };
        let a = train_graph_regressor(&collection, "gcn_{1}-fc1", GateVariant::Lin, &config)
            .unwrap();
        let b = train_graph_regressor(&collection, "gcn_{1}-fc1", GateVariant::Lin, &config)
            .unwrap();
        assert_eq!(a.losses, b.losses);
        let rows_a: Vec<(f64, f64)> = a.history.iter().map(|r| (r.train, r.val)).collect();
        let rows_b: Vec<(f64, f64)> = b.history.iter().map(|r| (r.train, r.val)).collect();
        assert_eq!(rows_a, rows_b);
    }
}
