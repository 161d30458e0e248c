//! Dataset files and the synthetic dataset factory.
//!
//! Two JSON forms. Node-centric (one graph, per-node labels):
//!
//! ```json
//! {
//!   "num_nodes": 3,
//!   "edges": [[0, 1], [1, 2]],
//!   "node_features": [[1.0], [0.0], [0.0]],
//!   "node_labels": [0, 1, 1],
//!   "masks": {"train": [0, 1], "val": [2], "test": []}
//! }
//! ```
//!
//! Graph-centric (a collection with optional per-graph regression targets):
//!
//! ```json
//! {"graphs": [{"num_nodes": 2, "edges": [[0, 1]],
//!              "node_features": [[1.0, 0.0], [0.0, 1.0]], "target": 1.0}]}
//! ```
//!
//! Loading validates everything and reports the offending field by path.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::Graph;
use crate::rng::{derive_seed, seeded_rng, DOMAIN_DATA};
use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("{field}: {problem}")]
    Invalid { field: String, problem: String },
}

fn invalid(field: impl Into<String>, problem: impl std::fmt::Display) -> DataError {
    DataError::Invalid {
        field: field.into(),
        problem: problem.to_string(),
    }
}

/// Node index sets for a fixed train/validation/test split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SplitMasks {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// One graph with per-node features and labels.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeDataset {
    pub graph: Graph,
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub masks: Option<SplitMasks>,
}

/// One member of a graph collection.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphSample {
    pub graph: Graph,
    pub features: Tensor,
    pub target: Option<f64>,
}

/// A uniform-feature-width set of graphs.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphCollection {
    pub graphs: Vec<GraphSample>,
    pub n_max: usize,
    pub feature_width: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Node(NodeDataset),
    Graphs(GraphCollection),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeFile {
    num_nodes: usize,
    #[serde(default, skip_serializing_if = "is_false")]
    directed: bool,
    edges: Vec<(usize, usize)>,
    node_features: Vec<Vec<f64>>,
    node_labels: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    masks: Option<MasksFile>,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MasksFile {
    train: Vec<usize>,
    val: Vec<usize>,
    test: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphsFile {
    graphs: Vec<GraphEntryFile>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GraphEntryFile {
    num_nodes: usize,
    edges: Vec<(usize, usize)>,
    node_features: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    target: Option<f64>,
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: shown.clone(),
        source,
    })?;
    let probe: serde_json::Value =
        serde_json::from_str(&text).map_err(|source| DataError::Json {
            path: shown.clone(),
            source,
        })?;
    if probe.get("graphs").is_some() {
        let file: GraphsFile =
            serde_json::from_str(&text).map_err(|source| DataError::Json {
                path: shown,
                source,
            })?;
        Ok(Dataset::Graphs(validate_collection(file)?))
    } else {
        let file: NodeFile = serde_json::from_str(&text).map_err(|source| DataError::Json {
            path: shown,
            source,
        })?;
        Ok(Dataset::Node(validate_node(file)?))
    }
}

pub fn write_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<(), DataError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let text = dataset_to_string(dataset);
    fs::write(path, text).map_err(|source| DataError::Io {
        path: shown,
        source,
    })
}

/// The exact bytes `write_dataset` would produce.
pub fn dataset_to_string(dataset: &Dataset) -> String {
    let value = match dataset {
        Dataset::Node(node) => {
            let file = NodeFile {
                num_nodes: node.graph.num_nodes(),
                directed: node.graph.is_directed(),
                edges: node.graph.edges().collect(),
                node_features: tensor_rows(&node.features),
                node_labels: node.labels.clone(),
                masks: node.masks.as_ref().map(|m| MasksFile {
                    train: m.train.clone(),
                    val: m.val.clone(),
                    test: m.test.clone(),
                }),
            };
            serde_json::to_string_pretty(&file)
        }
        Dataset::Graphs(collection) => {
            let file = GraphsFile {
                graphs: collection
                    .graphs
                    .iter()
                    .map(|g| GraphEntryFile {
                        num_nodes: g.graph.num_nodes(),
                        edges: g.graph.edges().collect(),
                        node_features: tensor_rows(&g.features),
                        target: g.target,
                    })
                    .collect(),
            };
            serde_json::to_string_pretty(&file)
        }
    };
    let mut text = value.expect("dataset structs serialize infallibly");
    text.push('\n');
    text
}

fn tensor_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn validate_features(
    field: &str,
    rows: &[Vec<f64>],
    num_nodes: usize,
) -> Result<Tensor, DataError> {
    if rows.len() != num_nodes {
        return Err(invalid(
            format!("{field}"),
            format!("{} feature rows for {} nodes", rows.len(), num_nodes),
        ));
    }
    let width = rows.first().map(|r| r.len()).unwrap_or(0);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(invalid(
                format!("{field}[{i}]"),
                format!("row has {} entries, expected {}", row.len(), width),
            ));
        }
        for (j, v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(invalid(
                    format!("{field}[{i}][{j}]"),
                    format!("non-finite value {v}"),
                ));
            }
        }
    }
    if width == 0 {
        return Err(invalid(field.to_string(), "feature rows are empty"));
    }
    Tensor::from_rows(rows.to_vec()).map_err(|e| invalid(field.to_string(), e))
}

fn validate_mask(
    field: &str,
    mask: &[usize],
    num_nodes: usize,
    seen: &mut [bool],
) -> Result<(), DataError> {
    for (i, &node) in mask.iter().enumerate() {
        if node >= num_nodes {
            return Err(invalid(
                format!("{field}[{i}]"),
                format!("node index {node} out of range for {num_nodes} nodes"),
            ));
        }
        if seen[node] {
            return Err(invalid(
                format!("{field}[{i}]"),
                format!("node {node} appears in more than one split"),
            ));
        }
        seen[node] = true;
    }
    Ok(())
}

fn validate_node(file: NodeFile) -> Result<NodeDataset, DataError> {
    let graph = if file.directed {
        Graph::directed(file.num_nodes, &file.edges)
    } else {
        Graph::undirected(file.num_nodes, &file.edges)
    }
    .map_err(|e| invalid("edges", e))?;
    let features = validate_features("node_features", &file.node_features, file.num_nodes)?;
    if file.node_labels.len() != file.num_nodes {
        return Err(invalid(
            "node_labels",
            format!(
                "{} labels for {} nodes",
                file.node_labels.len(),
                file.num_nodes
            ),
        ));
    }
    let num_classes = file.node_labels.iter().max().map(|m| m + 1).unwrap_or(0);
    let masks = match file.masks {
        Some(m) => {
            let mut seen = vec![false; file.num_nodes];
            validate_mask("masks.train", &m.train, file.num_nodes, &mut seen)?;
            validate_mask("masks.val", &m.val, file.num_nodes, &mut seen)?;
            validate_mask("masks.test", &m.test, file.num_nodes, &mut seen)?;
            Some(SplitMasks {
                train: m.train,
                val: m.val,
                test: m.test,
            })
        }
        None => None,
    };
    Ok(NodeDataset {
        graph,
        features,
        labels: file.node_labels,
        num_classes,
        masks,
    })
}

fn validate_collection(file: GraphsFile) -> Result<GraphCollection, DataError> {
    if file.graphs.is_empty() {
        return Err(invalid("graphs", "collection holds no graphs"));
    }
    let mut graphs = Vec::with_capacity(file.graphs.len());
    let mut n_max = 0usize;
    let mut feature_width = None;
    for (idx, entry) in file.graphs.into_iter().enumerate() {
        let field = format!("graphs[{idx}]");
        let graph = Graph::undirected(entry.num_nodes, &entry.edges)
            .map_err(|e| invalid(format!("{field}.edges"), e))?;
        let features = validate_features(
            &format!("{field}.node_features"),
            &entry.node_features,
            entry.num_nodes,
        )?;
        match feature_width {
            None => feature_width = Some(features.cols()),
            Some(w) if w != features.cols() => {
                return Err(invalid(
                    format!("{field}.node_features"),
                    format!("feature width {} differs from {} seen earlier", features.cols(), w),
                ));
            }
            _ => {}
        }
        if let Some(t) = entry.target {
            if !t.is_finite() {
                return Err(invalid(format!("{field}.target"), format!("non-finite value {t}")));
            }
        }
        n_max = n_max.max(entry.num_nodes);
        graphs.push(GraphSample {
            graph,
            features,
            target: entry.target,
        });
    }
    Ok(GraphCollection {
        graphs,
        n_max,
        feature_width: feature_width.unwrap_or(0),
    })
}

/// What to generate and how large.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SyntheticSpec {
    /// Two cliques of `clique_size` nodes joined by one bridge edge; identity
    /// features; the label is the clique a node belongs to. Ships a fixed
    /// 70/15/15 split.
    TwoClique { clique_size: usize },
    /// `count` random graphs with `n_max - 2 ..= n_max` nodes and uniform
    /// edge density in (0.2, 0.8); identity features padded to `n_max`
    /// columns; the regression target is the edge count.
    EdgeCount { count: usize, n_max: usize },
    /// `count` two-block graphs of 12 nodes (within-block edge probability
    /// 0.9, across 0.1); identity features; no targets.
    Communities { count: usize },
}

pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<Dataset, DataError> {
    match *spec {
        SyntheticSpec::TwoClique { clique_size } => {
            if clique_size < 2 {
                return Err(invalid("clique_size", "needs at least 2 nodes per clique"));
            }
            Ok(Dataset::Node(two_clique(clique_size, seed)))
        }
        SyntheticSpec::EdgeCount { count, n_max } => {
            if count == 0 {
                return Err(invalid("count", "needs at least one graph"));
            }
            if n_max < 3 {
                return Err(invalid("n_max", "needs at least 3 nodes"));
            }
            Ok(Dataset::Graphs(edge_count_graphs(count, n_max, seed)))
        }
        SyntheticSpec::Communities { count } => {
            if count == 0 {
                return Err(invalid("count", "needs at least one graph"));
            }
            Ok(Dataset::Graphs(community_graphs(count, seed)))
        }
    }
}

pub fn identity_features(n: usize, width: usize) -> Tensor {
    let mut t = Tensor::zeros(n, width);
    for i in 0..n {
        t.set(i, i, 1.0);
    }
    t
}

fn two_clique(clique_size: usize, seed: u64) -> NodeDataset {
    let n = 2 * clique_size;
    let mut edges = Vec::new();
    for base in [0, clique_size] {
        for i in 0..clique_size {
            for j in (i + 1)..clique_size {
                edges.push((base + i, base + j));
            }
        }
    }
    edges.push((0, clique_size));
    let graph = Graph::undirected(n, &edges).expect("constructed in range");
    let labels: Vec<usize> = (0..n).map(|i| usize::from(i >= clique_size)).collect();

    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeded_rng(derive_seed(seed, DOMAIN_DATA, 0));
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    let val_len = (n as f64 * 0.15).floor() as usize;
    let test_len = val_len;
    let train_len = n - val_len - test_len;
    let mut train: Vec<usize> = order[..train_len].to_vec();
    let mut val: Vec<usize> = order[train_len..train_len + val_len].to_vec();
    let mut test: Vec<usize> = order[train_len + val_len..].to_vec();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();

    NodeDataset {
        features: identity_features(n, n),
        labels,
        num_classes: 2,
        masks: Some(SplitMasks { train, val, test }),
        graph,
    }
}

fn edge_count_graphs(count: usize, n_max: usize, seed: u64) -> GraphCollection {
    let mut rng = seeded_rng(derive_seed(seed, DOMAIN_DATA, 1));
    let mut graphs = Vec::with_capacity(count);
    for _ in 0..count {
        let n = rng.gen_range(n_max - 2..=n_max);
        let p: f64 = rng.gen_range(0.2..0.8);
        let mut edges = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if rng.gen::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        let graph = Graph::undirected(n, &edges).expect("constructed in range");
        let target = graph.edge_count() as f64;
        graphs.push(GraphSample {
            features: identity_features(n, n_max),
            target: Some(target),
            graph,
        });
    }
    GraphCollection {
        graphs,
        n_max,
        feature_width: n_max,
    }
}

fn community_graphs(count: usize, seed: u64) -> GraphCollection {
    const N: usize = 12;
    const BLOCK: usize = 6;
    let mut rng = seeded_rng(derive_seed(seed, DOMAIN_DATA, 2));
    let mut graphs = Vec::with_capacity(count);
    for _ in 0..count {
        let mut edges = Vec::new();
        for i in 0..N {
            for j in (i + 1)..N {
                let same_block = (i < BLOCK) == (j < BLOCK);
                let p = if same_block { 0.9 } else { 0.1 };
                if rng.gen::<f64>() < p {
                    edges.push((i, j));
                }
            }
        }
        let graph = Graph::undirected(N, &edges).expect("constructed in range");
        graphs.push(GraphSample {
            features: identity_features(N, N),
            target: None,
            graph,
        });
    }
    GraphCollection {
        graphs,
        n_max: N,
        feature_width: N,
    }
}
