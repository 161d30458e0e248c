//! End-to-end training pipelines: transductive node classification, graph
//! regression with padded mini-batches, and the graph VAE with its sampling
//! and reconstruction-AUC utilities.

pub mod generative;
pub mod graph;
pub mod node;

use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, SplitMasks};
use crate::model::{ModelError, ModelState};
use crate::rng::{derive_seed, seeded_rng, DOMAIN_SPLIT};
use crate::tensor::TensorError;

pub use generative::{
    evaluate_loss, reconstruction_auc, reconstruction_target, reparameterize, sample_graphs,
    train_vae, vae_loss, VaeLossParts, VaeModel, VaeState, VaeTrainResult, DEFAULT_ENCODER_ARCH,
};
pub use graph::{
    graph_prediction, pad_collection, train_graph_regressor, GraphTrainResult, GRAPH_BATCH,
};
pub use node::{classification_logits, train_node_classifier, NodeTrainResult};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("need at least {needed} items to split, found {found}")]
    TooFewItems { found: usize, needed: usize },
    #[error("split ratio components must be finite, nonnegative, and sum to a positive value")]
    BadRatio,
    #[error("graphs[{index}] has no regression target")]
    MissingTarget { index: usize },
    #[error("graph collection needs at least {needed} graphs, found {found}")]
    TooFewGraphs { found: usize, needed: usize },
    #[error("no graph is usable for AUC: each one lacks either edges or non-edges")]
    NoAucGraphs,
    #[error("sampling threshold must be finite, got {value}")]
    BadThreshold { value: f64 },
    #[error("epoch {epoch}: {source}")]
    Train {
        epoch: usize,
        #[source]
        source: ModelError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
}

/// Shuffles `0..n` with a seed derived from `seed` and cuts it into
/// train/val/test index sets. Val and test sizes are floored from the ratio;
/// whatever remains goes to train, so small sets favor the training split.
pub fn split_nodes(
    n: usize,
    ratio: (f64, f64, f64),
    seed: u64,
) -> Result<SplitMasks, PipelineError> {
    if n < 3 {
        return Err(PipelineError::TooFewItems {
            found: n,
            needed: 3,
        });
    }
    split_shuffled(n, ratio, derive_seed(seed, DOMAIN_SPLIT, 0))
}

/// Same cut as [`split_nodes`] but takes a fully derived seed and accepts any
/// `n`, for splitting collections that may legitimately be tiny.
pub(crate) fn split_shuffled(
    n: usize,
    ratio: (f64, f64, f64),
    derived_seed: u64,
) -> Result<SplitMasks, PipelineError> {
    let (rt, rv, rs) = ratio;
    let total = rt + rv + rs;
    if ![rt, rv, rs].iter().all(|r| r.is_finite() && *r >= 0.0) || total <= 0.0 {
        return Err(PipelineError::BadRatio);
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeded_rng(derived_seed);
    order.shuffle(&mut rng);
    let n_val = (n as f64 * rv / total).floor() as usize;
    let n_test = (n as f64 * rs / total).floor() as usize;
    let n_train = n - n_val - n_test;
    let mut train: Vec<usize> = order[..n_train].to_vec();
    let mut val: Vec<usize> = order[n_train..n_train + n_val].to_vec();
    let mut test: Vec<usize> = order[n_train + n_val..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    Ok(SplitMasks { train, val, test })
}

/// Expands an index list into a 0/1 row mask of length `n`.
pub fn mask_vector(n: usize, indices: &[usize]) -> Vec<f64> {
    let mut mask = vec![0.0; n];
    for &i in indices {
        mask[i] = 1.0;
    }
    mask
}

/// A trained model plus the task-level context needed to use it again.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase", deny_unknown_fields)]
pub enum Checkpoint {
    Node {
        model: ModelState,
        num_classes: usize,
    },
    Graph {
        model: ModelState,
    },
    Vae {
        state: VaeState,
    },
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<(), DataError> {
    let body = serde_json::to_string_pretty(checkpoint).expect("checkpoint serializes");
    std::fs::write(path, body + "\n").map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, DataError> {
    let body = std::fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&body).map_err(|source| DataError::Json {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_follow_the_ratio_with_remainder_to_train() {
        let masks = split_nodes(100, (7.0, 1.5, 1.5), 0).unwrap();
        assert_eq!(masks.train.len(), 70);
        assert_eq!(masks.val.len(), 15);
        assert_eq!(masks.test.len(), 15);

        let masks = split_nodes(10, (8.0, 1.0, 1.0), 0).unwrap();
        assert_eq!(masks.train.len(), 8);
        assert_eq!(masks.val.len(), 1);
        assert_eq!(masks.test.len(), 1);
    }

    #[test]
    fn split_covers_every_index_exactly_once() {
        let masks = split_nodes(37, (7.0, 1.5, 1.5), 5).unwrap();
        let mut seen = vec![0u32; 37];
        for &i in masks
            .train
            .iter()
            .chain(masks.val.iter())
            .chain(masks.test.iter())
        {
            seen[i] += 1;
        }
        assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn split_is_seed_deterministic_and_seed_sensitive() {
        let a = split_nodes(50, (7.0, 1.5, 1.5), 11).unwrap();
        let b = split_nodes(50, (7.0, 1.5, 1.5), 11).unwrap();
        let c = split_nodes(50, (7.0, 1.5, 1.5), 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn split_actually_shuffles() {
        let masks = split_nodes(200, (7.0, 1.5, 1.5), 3).unwrap();
        assert_ne!(masks.train, (0..140).collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_tiny_and_degenerate_inputs() {
        assert!(matches!(
            split_nodes(2, (7.0, 1.5, 1.5), 0),
            Err(PipelineError::TooFewItems { found: 2, .. })
        ));
        assert!(matches!(
            split_nodes(10, (0.0, 0.0, 0.0), 0),
            Err(PipelineError::BadRatio)
        ));
        assert!(matches!(
            split_nodes(10, (f64::NAN, 1.0, 1.0), 0),
            Err(PipelineError::BadRatio)
        ));
        assert!(matches!(
            split_nodes(10, (-1.0, 1.0, 1.0), 0),
            Err(PipelineError::BadRatio)
        ));
    }

    #[test]
    fn mask_vector_marks_listed_rows() {
        assert_eq!(mask_vector(4, &[0, 2]), vec![1.0, 0.0, 1.0, 0.0]);
    }
}
