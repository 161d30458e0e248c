//! Transductive node classification: one graph, every node visible during
//! the forward pass, the loss masked down to the training nodes.

use crate::data::{NodeDataset, SplitMasks};
use crate::export::MetricsRow;
use crate::graph::adjacency_from_graph;
use crate::layers::{ClippedPowers, GateVariant};
use crate::model::{accuracy, train_step, ForwardCtx, Model, ModelError, TrainingConfig};
use crate::rng::{derive_seed2, DOMAIN_DROPOUT};
use crate::tensor::{Tape, Tensor, TensorError, Value};

use super::{mask_vector, split_nodes, PipelineError};

pub struct NodeTrainResult {
    pub model: Model,
    /// Per-epoch accuracy on each split; NaN where a split is empty.
    pub history: Vec<MetricsRow>,
    /// Pre-update training loss per epoch.
    pub losses: Vec<f64>,
    pub masks: SplitMasks,
}

/// Checks that a model's output width can serve `num_classes` logits. A
/// single output column is accepted for two classes: it is read as the
/// second class's logit against an implicit zero for the first.
fn check_class_width(model: &Model, num_classes: usize) -> Result<bool, ModelError> {
    let found = model.output_width();
    if found == num_classes {
        return Ok(false);
    }
    if found == 1 && num_classes == 2 {
        return Ok(true);
    }
    Err(ModelError::OutputWidth {
        found,
        expected: num_classes,
        hint: "the final fc layer must emit one logit per class (or a single logit for exactly two classes)"
            .into(),
    })
}

fn widen_single_logit(tape: &mut Tape, logits: Value) -> Result<Value, TensorError> {
    let rows = tape.value(logits).rows();
    let zero = tape.constant(Tensor::zeros(rows, 1));
    tape.concat_cols(zero, logits)
}

/// Inference-mode class logits for every node, widened to `num_classes`
/// columns when the model ends in a single-logit head.
pub fn classification_logits(
    model: &Model,
    powers: &ClippedPowers,
    features: &Tensor,
    num_classes: usize,
) -> Result<Tensor, PipelineError> {
    let widen = check_class_width(model, num_classes)?;
    let mut tape = Tape::new();
    let x = tape.constant(features.clone());
    let mut ctx = ForwardCtx::inference(powers);
    let mut out = model.forward(&mut tape, x, &mut ctx)?;
    if widen {
        out = widen_single_logit(&mut tape, out).map_err(ModelError::from)?;
    }
    Ok(tape.value(out).clone())
}

fn accuracy_or_nan(logits: &Tensor, labels: &[usize], mask: &[f64]) -> Result<f64, TensorError> {
    if mask.iter().all(|&m| m == 0.0) {
        return Ok(f64::NAN);
    }
    accuracy(logits, labels, mask)
}

pub fn train_node_classifier(
    data: &NodeDataset,
    arch: &str,
    gate: GateVariant,
    config: &TrainingConfig,
) -> Result<NodeTrainResult, PipelineError> {
    config.validate()?;
    let spec = arch.parse().map_err(ModelError::from)?;
    let n = data.graph.num_nodes();
    let mut model = Model::build(spec, n, data.features.cols(), gate, config.seed)?;
    let widen = check_class_width(&model, data.num_classes)?;

    let adjacency = adjacency_from_graph(&data.graph);
    let powers = model.powers_for(&adjacency)?;
    let masks = match &data.masks {
        Some(m) => m.clone(),
        None => split_nodes(n, (7.0, 1.5, 1.5), config.seed)?,
    };
    let train_mask = mask_vector(n, &masks.train);
    let val_mask = mask_vector(n, &masks.val);
    let test_mask = mask_vector(n, &masks.test);

    let mut optimizer = config.optimizer();
    let mut history = Vec::with_capacity(config.epochs);
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let dropout_seed = derive_seed2(config.seed, DOMAIN_DROPOUT, epoch as u64, 0);
        let loss = train_step(
            &mut model,
            &mut optimizer,
            config.l2_coefficient,
            |tape, model| {
                let x = tape.constant(data.features.clone());
                let mut ctx = ForwardCtx {
                    powers: &powers,
                    training: true,
                    dropout_rate: config.dropout_rate,
                    dropout_seed,
                    gate_sink: None,
                };
                let mut logits = model.forward(tape, x, &mut ctx)?;
                if widen {
                    logits = widen_single_logit(tape, logits)?;
                }
                Ok(tape.cross_entropy_loss(logits, &data.labels, &train_mask)?)
            },
        )
        .map_err(|source| PipelineError::Train { epoch, source })?;
        losses.push(loss);

        let logits = classification_logits(&model, &powers, &data.features, data.num_classes)?;
        history.push(MetricsRow {
            epoch,
            train: accuracy_or_nan(&logits, &data.labels, &train_mask)?,
            val: accuracy_or_nan(&logits, &data.labels, &val_mask)?,
            test: accuracy_or_nan(&logits, &data.labels, &test_mask)?,
        });
    }

    Ok(NodeTrainResult {
        model,
        history,
        losses,
        masks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Dataset, SyntheticSpec};

    fn two_clique_data() -> NodeDataset {
        match generate_synthetic(&SyntheticSpec::TwoClique { clique_size: 6 }, 9).unwrap() {
            Dataset::Node(d) => d,
            Dataset::Graphs(_) => unreachable!(),
        }
    }

    fn quick_config(epochs: usize) -> TrainingConfig {
        TrainingConfig {
            epochs,
            ..TrainingConfig::default()
        }
    }

    #[test]
    fn two_cliques_are_learned_to_full_training_accuracy() {
        let data = two_clique_data();
        let result =
            train_node_classifier(&data, "gcn_{1,2}-fc1-softmax", GateVariant::Lin, &quick_config(60))
                .unwrap();
        let last = result.history.last().unwrap();
        assert_eq!(last.train, 1.0, "train accuracy: {}", last.train);
        assert!(last.test >= 0.5, "test accuracy: {}", last.test);
    }

    #[test]
    fn same_seed_reproduces_the_loss_trajectory_bitwise() {
        let data = two_clique_data();
        let config = quick_config(5);
        let a = train_node_classifier(&data, "gcn_{1}-fc2", GateVariant::Lin, &config).unwrap();
        let b = train_node_classifier(&data, "gcn_{1}-fc2", GateVariant::Lin, &config).unwrap();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn validation_and_test_labels_never_touch_the_training_loss() {
        let data = two_clique_data();
        let config = quick_config(5);
        let clean = train_node_classifier(&data, "gcn_{1}-fc2", GateVariant::Lin, &config).unwrap();

        let mut scrambled = data.clone();
        let masks = clean.masks.clone();
        for &i in masks.val.iter().chain(masks.test.iter()) {
            scrambled.labels[i] = 1 - scrambled.labels[i];
        }
        scrambled.masks = Some(masks);
        let swapped =
            train_node_classifier(&scrambled, "gcn_{1}-fc2", GateVariant::Lin, &config).unwrap();

        assert_eq!(clean.losses, swapped.losses);
        let train_a: Vec<f64> = clean.history.iter().map(|r| r.train).collect();
        let train_b: Vec<f64> = swapped.history.iter().map(|r| r.train).collect();
        assert_eq!(train_a, train_b);
    }

    #[test]
    fn provided_masks_are_used_and_empty_splits_report_nan() {
        let mut data = two_clique_data();
        let n = data.graph.num_nodes();
        data.masks = Some(SplitMasks {
            train: (0..n).collect(),
            val: vec![],
            test: vec![],
        });
        let result =
            train_node_classifier(&data, "gcn_{1}-fc2", GateVariant::Lin, &quick_config(2)).unwrap();
        assert_eq!(result.masks.train.len(), n);
        assert!(result.history[0].val.is_nan());
        assert!(result.history[0].test.is_nan());
        assert!(result.history[0].train.is_finite());
    }

    #[test]
    fn zero_learning_rate_freezes_the_metrics() {
        let data = two_clique_data();
        let config = TrainingConfig {
            learning_rate: 0.0,
            epochs: 4,
            ..TrainingConfig::default()
        };
        let result = train_node_classifier(&data, "gcn_{1}-fc2", GateVariant::Lin, &config).unwrap();
        let first = result.losses[0];
        assert!(result.losses.iter().all(|&l| l == first));
        let row0 = &result.history[0];
        for row in &result.history {
            assert_eq!((row.train, row.val, row.test), (row0.train, row0.val, row0.test));
        }
    }

    #[test]
    fn class_width_mismatches_are_rejected_with_both_sizes() {
        let data = two_clique_data();
        let err = train_node_classifier(&data, "gcn_{1}-fc3", GateVariant::Lin, &quick_config(1))
            .err().unwrap();
        assert!(matches!(
            err,
            PipelineError::Model(ModelError::OutputWidth {
                found: 3,
                expected: 2,
                ..
            })
        ));
    }

    #[test]
    fn single_logit_head_is_widened_consistently() {
        let data = two_clique_data();
        let result =
            train_node_classifier(&data, "gcn_{1,2}-fc1", GateVariant::Lin, &quick_config(30))
                .unwrap();
        let adjacency = adjacency_from_graph(&data.graph);
        let powers = result.model.powers_for(&adjacency).unwrap();
        let logits = classification_logits(&result.model, &powers, &data.features, 2).unwrap();
        assert_eq!(logits.cols(), 2);
        assert!(logits.data().iter().step_by(2).all(|&v| v == 0.0));
    }
}
