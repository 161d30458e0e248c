//! Dense 2-D tensors, named parameters, and the reverse-mode tape.

mod gradcheck;
mod tape;

pub use gradcheck::{fd_gradients, finite_difference_check, GradCheckReport};
pub use tape::{Tape, Value};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shapes {lhs:?} and {rhs:?} are incompatible")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("row {row} has {found} entries, expected {expected}")]
    RaggedRows {
        row: usize,
        found: usize,
        expected: usize,
    },
    #[error("data length {found} does not fill a {rows}x{cols} matrix")]
    DataLength {
        rows: usize,
        cols: usize,
        found: usize,
    },
    #[error("{op}: expected a 1x1 scalar, found {rows}x{cols}")]
    NotScalar {
        op: &'static str,
        rows: usize,
        cols: usize,
    },
    #[error("{op}: mask length {found} does not match {expected} rows")]
    MaskLength {
        op: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("{op}: mask selects no rows")]
    EmptyMask { op: &'static str },
    #[error("dropout rate {rate} is outside [0, 1)")]
    DropoutRate { rate: f64 },
    #[error("{op}: label {label} at row {row} is out of range for {classes} classes")]
    LabelRange {
        op: &'static str,
        label: usize,
        row: usize,
        classes: usize,
    },
    #[error("{op}: {found} labels for {expected} rows")]
    LabelCount {
        op: &'static str,
        found: usize,
        expected: usize,
    },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
}

/// Row-major dense matrix of `f64`. Both dimensions are at least one; a
/// scalar is 1x1.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "tensor dimensions must be positive");
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        let mut t = Tensor::zeros(rows, cols);
        t.data.fill(value);
        t
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::from_vec(1, 1, vec![value]).expect("1x1")
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        if data.len() != rows * cols || rows == 0 || cols == 0 {
            return Err(TensorError::DataLength {
                rows,
                cols,
                found: data.len(),
            });
        }
        Ok(Tensor { rows, cols, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, TensorError> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for (row, values) in rows.iter().enumerate() {
            if values.len() != c {
                return Err(TensorError::RaggedRows {
                    row,
                    found: values.len(),
                    expected: c,
                });
            }
            data.extend_from_slice(values);
        }
        Tensor::from_vec(r, c, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        if self.cols != other.rows {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(),
                rhs: other.shape(),
            });
        }
        let mut out = Tensor::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for l in 0..self.cols {
                let left = self.get(i, l);
                if left == 0.0 {
                    continue;
                }
                let out_row = i * out.cols;
                let rhs_row = l * other.cols;
                for j in 0..other.cols {
                    out.data[out_row + j] += left * other.data[rhs_row + j];
                }
            }
        }
        Ok(out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Whether a parameter participates in L2 regularization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Weight,
    Bias,
}

/// A named trainable tensor with its gradient slot.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Handle into a [`ParamSet`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

/// Registry of parameters with stable ids and unique names.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn register(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            self.by_name(&name).is_none(),
            "duplicate parameter name {name}"
        );
        let grad = Tensor::zeros(value.rows(), value.cols());
        self.params.push(Parameter {
            name,
            kind,
            value,
            grad,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_rows_rejects_ragged_input() {
        let err = Tensor::from_rows(vec![vec![1.0, 2.0], vec![3.0]]).unwrap_err();
        assert!(err.to_string().contains("row 1"));
    }

    #[test]
    fn matmul_by_identity_is_identity() {
        let x = Tensor::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let mut eye = Tensor::zeros(2, 2);
        eye.set(0, 0, 1.0);
        eye.set(1, 1, 1.0);
        assert_eq!(x.matmul(&eye).unwrap(), x);
        assert_eq!(eye.matmul(&x).unwrap(), x);
    }

    #[test]
    fn matmul_small_case() {
        let a = Tensor::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(vec![vec![1.0], vec![1.0]]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c, Tensor::from_rows(vec![vec![3.0], vec![7.0]]).unwrap());
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(3, 2);
        let b = Tensor::zeros(3, 2);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("(3, 2)"), "{msg}");
    }

    #[test]
    fn transpose_roundtrips() {
        let a = Tensor::from_rows(vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
        assert_eq!(a.transpose().transpose(), a);
        assert_eq!(a.transpose().get(2, 1), 6.0);
    }

    #[test]
    fn param_set_registers_and_finds_by_name() {
        let mut params = ParamSet::new();
        let id = params.register("w", ParamKind::Weight, Tensor::zeros(2, 2));
        assert_eq!(params.by_name("w"), Some(id));
        assert_eq!(params.get(id).grad.shape(), (2, 2));
        assert!(params.by_name("missing").is_none());
    }

    #[test]
    #[should_panic(expected = "duplicate parameter name")]
    fn duplicate_parameter_names_panic() {
        let mut params = ParamSet::new();
        params.register("w", ParamKind::Weight, Tensor::zeros(1, 1));
        params.register("w", ParamKind::Weight, Tensor::zeros(1, 1));
    }
}
