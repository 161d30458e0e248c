//! CSV export for metrics, weight matrices, and gate matrices.
//!
//! Values are written with `f64`'s `Display`, the shortest representation
//! that parses back to the identical bits, so export followed by import is
//! exact. Matrix files are self-describing: a fixed header line, then
//! `name,rows,cols`, then one comma-separated line per matrix row.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::data::Dataset;
use crate::graph::{adjacency_from_graph, pad_graph, AdjacencyMatrix, GraphError};
use crate::model::{ForwardCtx, Model, ModelError};
use crate::tensor::{Tape, Tensor};

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path} line {line}: {problem}")]
    Format {
        path: String,
        line: usize,
        problem: String,
    },
    #[error("matrix name `{name}` may not contain commas or newlines")]
    BadName { name: String },
    #[error("architecture `{arch}` has no adaptive layers, so there are no gate values to export")]
    NoAdaptiveLayers { arch: String },
    #[error("center node {center} is out of range for graph {graph} ({n} nodes)")]
    CenterOutOfRange {
        center: usize,
        graph: usize,
        n: usize,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// One epoch's metric values. A split that does not apply stays NaN.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

pub const METRICS_HEADER: &str = "epoch,train_metric,val_metric,test_metric";

pub fn metrics_csv_string(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.epoch, row.train, row.val, row.test
        ));
    }
    out
}

pub fn write_metrics_csv(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<(), ExportError> {
    write_text(path, &metrics_csv_string(rows))
}

pub fn matrix_csv_string(name: &str, t: &Tensor) -> Result<String, ExportError> {
    if name.contains(',') || name.contains('\n') {
        return Err(ExportError::BadName {
            name: name.to_string(),
        });
    }
    let mut out = String::from("name,rows,cols\n");
    out.push_str(&format!("{},{},{}\n", name, t.rows(), t.cols()));
    for i in 0..t.rows() {
        let line: Vec<String> = t.row(i).iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    Ok(out)
}

pub fn write_matrix_csv(
    path: impl AsRef<Path>,
    name: &str,
    t: &Tensor,
) -> Result<(), ExportError> {
    let text = matrix_csv_string(name, t)?;
    write_text(path, &text)
}

/// Reads a file written by [`write_matrix_csv`] back to its name and values.
pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<(String, Tensor), ExportError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| ExportError::Io {
        path: shown.clone(),
        source,
    })?;
    let bad = |line: usize, problem: String| ExportError::Format {
        path: shown.clone(),
        line,
        problem,
    };
    let mut lines = text.lines();
    match lines.next() {
        Some("name,rows,cols") => {}
        other => {
            return Err(bad(
                1,
                format!("expected header `name,rows,cols`, found {other:?}"),
            ))
        }
    }
    let meta = lines.next().ok_or_else(|| bad(2, "missing metadata line".into()))?;
    let parts: Vec<&str> = meta.split(',').collect();
    if parts.len() != 3 {
        return Err(bad(2, format!("expected `name,rows,cols`, found `{meta}`")));
    }
    let name = parts[0].to_string();
    let rows: usize = parts[1]
        .parse()
        .map_err(|_| bad(2, format!("bad row count `{}`", parts[1])))?;
    let cols: usize = parts[2]
        .parse()
        .map_err(|_| bad(2, format!("bad column count `{}`", parts[2])))?;
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let line_no = 3 + i;
        let line = lines
            .next()
            .ok_or_else(|| bad(line_no, format!("missing row {i} of {rows}")))?;
        let values: Vec<&str> = line.split(',').collect();
        if values.len() != cols {
            return Err(bad(
                line_no,
                format!("row has {} values, expected {}", values.len(), cols),
            ));
        }
        for v in values {
            data.push(
                v.parse::<f64>()
                    .map_err(|_| bad(line_no, format!("bad value `{v}`")))?,
            );
        }
    }
    if lines.next().is_some() {
        return Err(bad(3 + rows, "trailing content after matrix rows".into()));
    }
    let tensor = Tensor::from_vec(rows, cols, data)
        .map_err(|e| bad(2, format!("inconsistent dimensions: {e}")))?;
    Ok((name, tensor))
}

/// Runs `model` over every graph in `dataset` and writes each adaptive gate
/// it computes into `dir`: per graph, layer, and order, the full `n x n` gate
/// matrix plus the single row belonging to the `center` node, both as CSV.
///
/// Returns the written paths in graph, layer, order. Inference only, so the
/// same checkpoint and dataset always produce identical files.
pub fn export_gate_values(
    model: &Model,
    dataset: &Dataset,
    dir: impl AsRef<Path>,
    center: usize,
) -> Result<Vec<PathBuf>, ExportError> {
    let dir = dir.as_ref();
    if !model.spec().has_adaptive() {
        return Err(ExportError::NoAdaptiveLayers {
            arch: model.spec().to_string(),
        });
    }
    let inputs: Vec<(Tensor, AdjacencyMatrix)> = match dataset {
        Dataset::Node(node) => vec![(node.features.clone(), adjacency_from_graph(&node.graph))],
        Dataset::Graphs(collection) => collection
            .graphs
            .iter()
            .map(|sample| {
                let padded = pad_graph(&sample.graph, &sample.features, collection.n_max)?;
                Ok::<_, GraphError>((padded.features, padded.adjacency))
            })
            .collect::<Result<_, _>>()?,
    };
    fs::create_dir_all(dir).map_err(|source| ExportError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut written = Vec::new();
    for (g, (features, adjacency)) in inputs.iter().enumerate() {
        let powers = model.powers_for(adjacency)?;
        let mut captures = Vec::new();
        let mut tape = Tape::new();
        let x = tape.constant(features.clone());
        let mut ctx = ForwardCtx::inference(&powers);
        ctx.gate_sink = Some(&mut captures);
        model.forward(&mut tape, x, &mut ctx)?;
        for cap in captures {
            let n = cap.gate.rows();
            if center >= n {
                return Err(ExportError::CenterOutOfRange {
                    center,
                    graph: g,
                    n,
                });
            }
            let stem = format!("graph{g}.layer{}.order{}", cap.layer, cap.order);
            let full = dir.join(format!("{stem}.gate.csv"));
            write_matrix_csv(&full, &format!("{stem}.gate"), &cap.gate)?;
            written.push(full);
            let row = Tensor::from_vec(1, n, cap.gate.row(center).to_vec())
                .expect("gate row length matches its width");
            let row_path = dir.join(format!("{stem}.center{center}.csv"));
            write_matrix_csv(&row_path, &format!("{stem}.center{center}"), &row)?;
            written.push(row_path);
        }
    }
    Ok(written)
}

fn write_text(path: impl AsRef<Path>, text: &str) -> Result<(), ExportError> {
    let path = path.as_ref();
    fs::write(path, text).map_err(|source| ExportError::Io {
        path: path.display().to_string(),
        source,
    })
}
