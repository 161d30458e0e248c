//! Graph types and clipped adjacency powers.
//!
//! The k-th power of a 0/1 adjacency matrix counts walks: entry (i, j) of
//! `A^k` is the number of walks of length exactly k from i to j. Clipping
//! `min(A^k + I, 1)` turns those counts into the 0/1 connectivity pattern
//! that masks the convolution weights, with the diagonal forced to one so a
//! node always sees itself.

use std::collections::{BTreeSet, VecDeque};

use thiserror::Error;

use crate::tensor::Tensor;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("graph must have at least one node")]
    NoNodes,
    #[error("edge {index} = ({i}, {j}) is out of range for a graph with {n} nodes")]
    EdgeOutOfRange {
        index: usize,
        i: usize,
        j: usize,
        n: usize,
    },
    #[error("node index {index} is out of range for a graph with {n} nodes")]
    NodeOutOfRange { index: usize, n: usize },
    #[error("adjacency power requires k >= 1, got {k}")]
    ZeroPower { k: usize },
    #[error("graph with {n} nodes does not fit node capacity {n_max}")]
    CapacityExceeded { n: usize, n_max: usize },
    #[error("feature matrix has {rows} rows but the graph has {n} nodes")]
    FeatureRowMismatch { rows: usize, n: usize },
    #[error("adjacency entry ({i}, {j}) is {value}, expected 0 or 1")]
    NotBinary { i: usize, j: usize, value: f64 },
    #[error("adjacency rows form a {rows}x{cols} matrix, expected square")]
    NotSquare { rows: usize, cols: usize },
}

/// A finite graph held as a deduplicated edge set plus successor lists.
///
/// Undirected edges are stored once as `(min, max)` pairs; successor lists
/// carry both directions. Self-loops are permitted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    directed: bool,
    edges: BTreeSet<(usize, usize)>,
    succ: Vec<Vec<usize>>,
}

impl Graph {
    pub fn undirected(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        Self::build(n, edges, false)
    }

    pub fn directed(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        Self::build(n, edges, true)
    }

    fn build(n: usize, edges: &[(usize, usize)], directed: bool) -> Result<Self, GraphError> {
        if n == 0 {
            return Err(GraphError::NoNodes);
        }
        let mut set = BTreeSet::new();
        for (index, &(i, j)) in edges.iter().enumerate() {
            if i >= n || j >= n {
                return Err(GraphError::EdgeOutOfRange { index, i, j, n });
            }
            let key = if directed || i <= j { (i, j) } else { (j, i) };
            set.insert(key);
        }
        let mut succ = vec![BTreeSet::new(); n];
        for &(i, j) in &set {
            succ[i].insert(j);
            if !directed {
                succ[j].insert(i);
            }
        }
        let succ = succ
            .into_iter()
            .map(|s| s.into_iter().collect::<Vec<_>>())
            .collect();
        Ok(Graph {
            n,
            directed,
            edges: set,
            succ,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Deduplicated edges; `(min, max)` pairs for undirected graphs.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    /// Nodes reachable from `i` in one step along edge direction.
    pub fn successors(&self, i: usize) -> &[usize] {
        &self.succ[i]
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        if self.directed || i <= j {
            self.edges.contains(&(i, j))
        } else {
            self.edges.contains(&(j, i))
        }
    }
}

/// Square 0/1 matrix. Entries are stored as `f64` so the matrix can feed
/// matrix products directly, but every entry is exactly 0.0 or 1.0.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjacencyMatrix {
    n: usize,
    data: Vec<f64>,
}

impl AdjacencyMatrix {
    pub fn zeros(n: usize) -> Self {
        assert!(n > 0, "adjacency matrix needs at least one node");
        AdjacencyMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    /// Validates that `rows` is square with entries exactly 0 or 1.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, GraphError> {
        let n = rows.len();
        if n == 0 {
            return Err(GraphError::NoNodes);
        }
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(GraphError::NotSquare {
                    rows: n,
                    cols: row.len(),
                });
            }
            for (j, &v) in row.iter().enumerate() {
                if v != 0.0 && v != 1.0 {
                    return Err(GraphError::NotBinary { i, j, value: v });
                }
                data.push(v);
            }
        }
        Ok(AdjacencyMatrix { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, present: bool) {
        self.data[i * self.n + j] = if present { 1.0 } else { 0.0 };
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (i + 1..self.n).all(|j| self.get(i, j) == self.get(j, i)))
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(self.n, self.n, self.data.clone()).expect("square data")
    }
}

/// Walk-count matrix with saturating `u64` entries, so huge counts clamp at
/// `u64::MAX` instead of wrapping silently. Clipping only asks whether an
/// entry is nonzero, which saturation preserves.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountMatrix {
    n: usize,
    data: Vec<u64>,
}

impl CountMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.data[i * self.n + j]
    }
}

/// 0/1 adjacency of `graph`: entry (i, j) is 1 iff the graph has an edge
/// from i to j. Symmetric exactly when the graph is undirected.
pub fn adjacency_from_graph(graph: &Graph) -> AdjacencyMatrix {
    let mut a = AdjacencyMatrix::zeros(graph.num_nodes());
    for i in 0..graph.num_nodes() {
        for &j in graph.successors(i) {
            a.set(i, j, true);
        }
    }
    a
}

/// `A^k` in saturating integer arithmetic. Entry (i, j) is the number of
/// walks of length exactly k from i to j.
pub fn matrix_power(a: &AdjacencyMatrix, k: usize) -> Result<CountMatrix, GraphError> {
    if k == 0 {
        return Err(GraphError::ZeroPower { k });
    }
    let n = a.n();
    let base: Vec<u64> = a.data.iter().map(|&v| v as u64).collect();
    let mut acc = base.clone();
    for _ in 1..k {
        let mut next = vec![0u64; n * n];
        for i in 0..n {
            for l in 0..n {
                let left = acc[i * n + l];
                if left == 0 {
                    continue;
                }
                for j in 0..n {
                    let prod = left.saturating_mul(base[l * n + j]);
                    next[i * n + j] = next[i * n + j].saturating_add(prod);
                }
            }
        }
        acc = next;
    }
    Ok(CountMatrix { n, data: acc })
}

/// Clipped adjacency power `min(A^k + I, 1)`: 1 at (i, j) iff some walk of
/// length exactly k joins i to j, or i == j. The full integer power is formed
/// first; clipping never happens on intermediate products.
pub fn clipped_power(a: &AdjacencyMatrix, k: usize) -> Result<AdjacencyMatrix, GraphError> {
    let counts = matrix_power(a, k)?;
    let n = a.n();
    let mut out = AdjacencyMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, i == j || counts.get(i, j) > 0);
        }
    }
    Ok(out)
}

/// Reference oracle for [`clipped_power`] columns, computed by explicit walk
/// enumeration with no matrix algebra: the set of nodes i admitting a walk of
/// length exactly k from i to `center`, plus `center` itself.
pub fn walk_reach_oracle(
    graph: &Graph,
    center: usize,
    k: usize,
) -> Result<BTreeSet<usize>, GraphError> {
    let n = graph.num_nodes();
    if center >= n {
        return Err(GraphError::NodeOutOfRange { index: center, n });
    }
    if k == 0 {
        return Err(GraphError::ZeroPower { k });
    }
    fn walk_exists(graph: &Graph, from: usize, to: usize, steps: usize) -> bool {
        if steps == 0 {
            return from == to;
        }
        graph
            .successors(from)
            .iter()
            .any(|&next| walk_exists(graph, next, to, steps - 1))
    }
    let mut reach: BTreeSet<usize> = (0..n)
        .filter(|&i| walk_exists(graph, i, center, k))
        .collect();
    reach.insert(center);
    Ok(reach)
}

/// Length of the shortest path from i to j, `None` if j is unreachable.
pub fn bfs_distance(graph: &Graph, i: usize, j: usize) -> Result<Option<usize>, GraphError> {
    let n = graph.num_nodes();
    for index in [i, j] {
        if index >= n {
            return Err(GraphError::NodeOutOfRange { index, n });
        }
    }
    let mut dist = vec![None; n];
    dist[i] = Some(0);
    let mut queue = VecDeque::from([i]);
    while let Some(u) = queue.pop_front() {
        let d = dist[u].expect("queued nodes have distances");
        if u == j {
            return Ok(Some(d));
        }
        for &v in graph.successors(u) {
            if dist[v].is_none() {
                dist[v] = Some(d + 1);
                queue.push_back(v);
            }
        }
    }
    Ok(dist[j])
}

/// A graph embedded in a fixed node capacity. Rows and columns at index
/// `valid_count` and beyond are all zero in both adjacency and features, and
/// the 0/1 `mask` marks the valid rows.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedGraph {
    pub adjacency: AdjacencyMatrix,
    pub features: Tensor,
    pub valid_count: usize,
    pub mask: Vec<f64>,
}

/// Embeds `graph` and its `n x m` feature matrix into capacity `n_max`,
/// zero-padding the bottom-right.
pub fn pad_graph(
    graph: &Graph,
    features: &Tensor,
    n_max: usize,
) -> Result<PaddedGraph, GraphError> {
    let n = graph.num_nodes();
    if n > n_max {
        return Err(GraphError::CapacityExceeded { n, n_max });
    }
    if features.rows() != n {
        return Err(GraphError::FeatureRowMismatch {
            rows: features.rows(),
            n,
        });
    }
    let mut adjacency = AdjacencyMatrix::zeros(n_max);
    for i in 0..n {
        for &j in graph.successors(i) {
            adjacency.set(i, j, true);
        }
    }
    let mut padded = Tensor::zeros(n_max, features.cols());
    for i in 0..n {
        for j in 0..features.cols() {
            padded.set(i, j, features.get(i, j));
        }
    }
    let mut mask = vec![0.0; n_max];
    for m in mask.iter_mut().take(n) {
        *m = 1.0;
    }
    Ok(PaddedGraph {
        adjacency,
        features: padded,
        valid_count: n,
        mask,
    })
}
