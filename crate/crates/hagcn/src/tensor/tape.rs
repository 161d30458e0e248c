//! Reverse-mode tape.
//!
//! Operations execute eagerly on stored tensors and append a record; calling
//! [`Tape::backward`] replays the records in reverse, accumulates adjoints,
//! writes `d loss / d parameter` into every parameter that was lifted onto
//! the tape, and clears the tape. A training step therefore builds a fresh
//! tape, runs forward, and consumes it.
//!
//! Constants (adjacency patterns, targets, noise draws) enter through
//! [`Tape::constant`] and receive no gradient.

use rand::Rng;

use super::{ParamId, ParamSet, Tensor, TensorError};
use crate::rng::seeded_rng;

/// Handle to a tensor stored on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Value(usize);

enum Record {
    Matmul { a: Value, b: Value, out: Value },
    Hadamard { a: Value, b: Value, out: Value },
    Add { a: Value, b: Value, out: Value },
    Scale { a: Value, factor: f64, out: Value },
    AddScalar { a: Value, out: Value },
    Exp { a: Value, out: Value },
    Expm1 { a: Value, out: Value },
    ConcatCols { a: Value, b: Value, out: Value },
    ConcatRows { a: Value, b: Value, out: Value },
    Reshape { a: Value, out: Value },
    Transpose { a: Value, out: Value },
    Sigmoid { a: Value, out: Value },
    Relu { a: Value, out: Value },
    SoftmaxRows { a: Value, out: Value },
    Dropout { a: Value, mask: Tensor, out: Value },
    AddRowBias { x: Value, bias: Value, out: Value },
    MaskedMeanRows { x: Value, mask: Vec<f64>, count: usize, out: Value },
    SumAll { a: Value, out: Value },
    /// Scalar loss with its input gradient precomputed at forward time.
    Loss { input: Value, grad: Tensor, out: Value },
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Tensor>,
    records: Vec<Record>,
    leaves: Vec<(ParamId, usize)>,
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn debug_check(t: &Tensor, op: &'static str) {
    debug_assert!(t.is_finite(), "{op} produced a non-finite value");
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, t: Tensor) -> Value {
        self.nodes.push(t);
        Value(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Value {
        self.push(t)
    }

    /// Lifts a parameter's current value onto the tape; `backward` will
    /// accumulate into its gradient slot.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Value {
        let v = self.push(params.get(id).value.clone());
        self.leaves.push((id, v.0));
        v
    }

    pub fn value(&self, v: Value) -> &Tensor {
        &self.nodes[v.0]
    }

    pub fn scalar(&self, v: Value) -> Result<f64, TensorError> {
        let t = self.value(v);
        if t.shape() != (1, 1) {
            return Err(TensorError::NotScalar {
                op: "scalar",
                rows: t.rows(),
                cols: t.cols(),
            });
        }
        Ok(t.get(0, 0))
    }

    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value, TensorError> {
        let out = self.value(a).matmul(self.value(b))?;
        debug_check(&out, "matmul");
        let out = self.push(out);
        self.records.push(Record::Matmul { a, b, out });
        Ok(out)
    }

    pub fn hadamard(&mut self, a: Value, b: Value) -> Result<Value, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "hadamard",
                lhs: ta.shape(),
                rhs: tb.shape(),
            });
        }
        let mut out = ta.clone();
        for (o, &r) in out.data_mut().iter_mut().zip(tb.data()) {
            *o *= r;
        }
        debug_check(&out, "hadamard");
        let out = self.push(out);
        self.records.push(Record::Hadamard { a, b, out });
        Ok(out)
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: ta.shape(),
                rhs: tb.shape(),
            });
        }
        let mut out = ta.clone();
        for (o, &r) in out.data_mut().iter_mut().zip(tb.data()) {
            *o += r;
        }
        debug_check(&out, "add");
        let out = self.push(out);
        self.records.push(Record::Add { a, b, out });
        Ok(out)
    }

    pub fn scale(&mut self, a: Value, factor: f64) -> Value {
        let out = self.value(a).map(|v| v * factor);
        debug_check(&out, "scale");
        let out = self.push(out);
        self.records.push(Record::Scale { a, factor, out });
        out
    }

    pub fn add_scalar(&mut self, a: Value, offset: f64) -> Value {
        let out = self.value(a).map(|v| v + offset);
        debug_check(&out, "add_scalar");
        let out = self.push(out);
        self.records.push(Record::AddScalar { a, out });
        out
    }

    pub fn exp(&mut self, a: Value) -> Value {
        let out = self.value(a).map(f64::exp);
        debug_check(&out, "exp");
        let out = self.push(out);
        self.records.push(Record::Exp { a, out });
        out
    }

    /// `exp(x) - 1` computed without cancellation near zero.
    pub fn expm1(&mut self, a: Value) -> Value {
        let out = self.value(a).map(f64::exp_m1);
        debug_check(&out, "expm1");
        let out = self.push(out);
        self.records.push(Record::Expm1 { a, out });
        out
    }

    /// Horizontal concatenation `[a | b]`.
    pub fn concat_cols(&mut self, a: Value, b: Value) -> Result<Value, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rows() != tb.rows() {
            return Err(TensorError::ShapeMismatch {
                op: "concat_cols",
                lhs: ta.shape(),
                rhs: tb.shape(),
            });
        }
        let rows = ta.rows();
        let mut out = Tensor::zeros(rows, ta.cols() + tb.cols());
        for i in 0..rows {
            for j in 0..ta.cols() {
                out.set(i, j, ta.get(i, j));
            }
            for j in 0..tb.cols() {
                out.set(i, ta.cols() + j, tb.get(i, j));
            }
        }
        let out = self.push(out);
        self.records.push(Record::ConcatCols { a, b, out });
        Ok(out)
    }

    /// Vertical concatenation, `a` on top.
    pub fn concat_rows(&mut self, a: Value, b: Value) -> Result<Value, TensorError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "concat_rows",
                lhs: ta.shape(),
                rhs: tb.shape(),
            });
        }
        let mut data = ta.data().to_vec();
        data.extend_from_slice(tb.data());
        let out = Tensor::from_vec(ta.rows() + tb.rows(), ta.cols(), data)?;
        let out = self.push(out);
        self.records.push(Record::ConcatRows { a, b, out });
        Ok(out)
    }

    pub fn reshape(&mut self, a: Value, rows: usize, cols: usize) -> Result<Value, TensorError> {
        let ta = self.value(a);
        if ta.rows() * ta.cols() != rows * cols {
            return Err(TensorError::ShapeMismatch {
                op: "reshape",
                lhs: ta.shape(),
                rhs: (rows, cols),
            });
        }
        let out = Tensor::from_vec(rows, cols, ta.data().to_vec())?;
        let out = self.push(out);
        self.records.push(Record::Reshape { a, out });
        Ok(out)
    }

    pub fn transpose(&mut self, a: Value) -> Value {
        let out = self.value(a).transpose();
        let out = self.push(out);
        self.records.push(Record::Transpose { a, out });
        out
    }

    pub fn sigmoid(&mut self, a: Value) -> Value {
        let out = self.value(a).map(stable_sigmoid);
        debug_check(&out, "sigmoid");
        let out = self.push(out);
        self.records.push(Record::Sigmoid { a, out });
        out
    }

    pub fn relu(&mut self, a: Value) -> Value {
        let out = self.value(a).map(|v| v.max(0.0));
        let out = self.push(out);
        self.records.push(Record::Relu { a, out });
        out
    }

    /// Row-wise softmax with max subtraction for stability.
    pub fn softmax_rows(&mut self, a: Value) -> Value {
        let ta = self.value(a);
        let mut out = Tensor::zeros(ta.rows(), ta.cols());
        for i in 0..ta.rows() {
            let row = ta.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            let mut exps = vec![0.0; row.len()];
            for (j, &x) in row.iter().enumerate() {
                let e = (x - max).exp();
                exps[j] = e;
                sum += e;
            }
            for (j, e) in exps.iter().enumerate() {
                out.set(i, j, e / sum);
            }
        }
        debug_check(&out, "softmax_rows");
        let out = self.push(out);
        self.records.push(Record::SoftmaxRows { a, out });
        out
    }

    /// Inverted dropout. Entries drop with probability `rate` and survivors
    /// scale by `1 / (1 - rate)`, so the expected value is unchanged. With
    /// `training == false` or `rate == 0` the input passes through untouched.
    /// The mask depends only on `seed` and the input shape.
    pub fn dropout(
        &mut self,
        a: Value,
        rate: f64,
        seed: u64,
        training: bool,
    ) -> Result<Value, TensorError> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::DropoutRate { rate });
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let ta = self.value(a);
        let keep_scale = 1.0 / (1.0 - rate);
        let mut rng = seeded_rng(seed);
        let mut mask = Tensor::zeros(ta.rows(), ta.cols());
        for m in mask.data_mut() {
            if rng.gen::<f64>() >= rate {
                *m = keep_scale;
            }
        }
        let mut out = ta.clone();
        for (o, &m) in out.data_mut().iter_mut().zip(mask.data()) {
            *o *= m;
        }
        let out = self.push(out);
        self.records.push(Record::Dropout { a, mask, out });
        Ok(out)
    }

    /// Adds a `1 x c` bias row to every row of `x`.
    pub fn add_row_bias(&mut self, x: Value, bias: Value) -> Result<Value, TensorError> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.rows() != 1 || tb.cols() != tx.cols() {
            return Err(TensorError::ShapeMismatch {
                op: "add_row_bias",
                lhs: tx.shape(),
                rhs: tb.shape(),
            });
        }
        let mut out = tx.clone();
        for i in 0..out.rows() {
            for j in 0..out.cols() {
                let v = out.get(i, j) + tb.get(0, j);
                out.set(i, j, v);
            }
        }
        debug_check(&out, "add_row_bias");
        let out = self.push(out);
        self.records.push(Record::AddRowBias { x, bias, out });
        Ok(out)
    }

    /// Mean over the rows selected by the 0/1 `mask`, as a `1 x c` row.
    /// Unselected rows contribute nothing, in value or in gradient.
    pub fn masked_mean_rows(&mut self, x: Value, mask: &[f64]) -> Result<Value, TensorError> {
        let tx = self.value(x);
        if mask.len() != tx.rows() {
            return Err(TensorError::MaskLength {
                op: "masked_mean_rows",
                found: mask.len(),
                expected: tx.rows(),
            });
        }
        let count = mask.iter().filter(|&&m| m != 0.0).count();
        if count == 0 {
            return Err(TensorError::EmptyMask {
                op: "masked_mean_rows",
            });
        }
        let mut out = Tensor::zeros(1, tx.cols());
        for i in 0..tx.rows() {
            if mask[i] == 0.0 {
                continue;
            }
            for j in 0..tx.cols() {
                out.set(0, j, out.get(0, j) + tx.get(i, j));
            }
        }
        for v in out.data_mut() {
            *v /= count as f64;
        }
        debug_check(&out, "masked_mean_rows");
        let out = self.push(out);
        self.records.push(Record::MaskedMeanRows {
            x,
            mask: mask.to_vec(),
            count,
            out,
        });
        Ok(out)
    }

    /// Sum of all entries, as a 1x1 scalar.
    pub fn sum_all(&mut self, a: Value) -> Value {
        let total: f64 = self.value(a).data().iter().sum();
        let out = self.push(Tensor::scalar(total));
        self.records.push(Record::SumAll { a, out });
        out
    }

    /// Masked mean cross-entropy between row logits and integer labels.
    /// Log-softmax is fused in, so logits never pass through an explicit
    /// softmax. Rows with `mask == 0` are skipped entirely: their logits and
    /// labels are never read.
    pub fn cross_entropy_loss(
        &mut self,
        logits: Value,
        labels: &[usize],
        mask: &[f64],
    ) -> Result<Value, TensorError> {
        let tl = self.value(logits);
        let (rows, cols) = tl.shape();
        if labels.len() != rows {
            return Err(TensorError::LabelCount {
                op: "cross_entropy_loss",
                found: labels.len(),
                expected: rows,
            });
        }
        if mask.len() != rows {
            return Err(TensorError::MaskLength {
                op: "cross_entropy_loss",
                found: mask.len(),
                expected: rows,
            });
        }
        let selected = mask.iter().filter(|&&m| m != 0.0).count();
        if selected == 0 {
            return Err(TensorError::EmptyMask {
                op: "cross_entropy_loss",
            });
        }
        let mut total = 0.0;
        let mut grad = Tensor::zeros(rows, cols);
        for i in 0..rows {
            if mask[i] == 0.0 {
                continue;
            }
            let label = labels[i];
            if label >= cols {
                return Err(TensorError::LabelRange {
                    op: "cross_entropy_loss",
                    label,
                    row: i,
                    classes: cols,
                });
            }
            let row = tl.row(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let log_sum = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln();
            total -= row[label] - max - log_sum;
            for j in 0..cols {
                let p = (row[j] - max - log_sum).exp();
                let target = if j == label { 1.0 } else { 0.0 };
                grad.set(i, j, (p - target) / selected as f64);
            }
        }
        let out = Tensor::scalar(total / selected as f64);
        debug_check(&out, "cross_entropy_loss");
        let out = self.push(out);
        self.records.push(Record::Loss {
            input: logits,
            grad,
            out,
        });
        Ok(out)
    }

    /// Masked mean squared error: mean over selected rows of the row-mean
    /// squared difference. `target` is a constant.
    pub fn mse_loss(
        &mut self,
        pred: Value,
        target: &Tensor,
        mask: &[f64],
    ) -> Result<Value, TensorError> {
        let tp = self.value(pred);
        if tp.shape() != target.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mse_loss",
                lhs: tp.shape(),
                rhs: target.shape(),
            });
        }
        let (rows, cols) = tp.shape();
        if mask.len() != rows {
            return Err(TensorError::MaskLength {
                op: "mse_loss",
                found: mask.len(),
                expected: rows,
            });
        }
        let selected = mask.iter().filter(|&&m| m != 0.0).count();
        if selected == 0 {
            return Err(TensorError::EmptyMask { op: "mse_loss" });
        }
        let norm = selected as f64 * cols as f64;
        let mut total = 0.0;
        let mut grad = Tensor::zeros(rows, cols);
        for i in 0..rows {
            if mask[i] == 0.0 {
                continue;
            }
            for j in 0..cols {
                let diff = tp.get(i, j) - target.get(i, j);
                total += diff * diff / norm;
                grad.set(i, j, 2.0 * diff / norm);
            }
        }
        let out = Tensor::scalar(total);
        debug_check(&out, "mse_loss");
        let out = self.push(out);
        self.records.push(Record::Loss {
            input: pred,
            grad,
            out,
        });
        Ok(out)
    }

    /// Binary cross-entropy summed over all entries, with probabilities
    /// clamped to `[1e-7, 1 - 1e-7]` so exact 0/1 predictions stay finite.
    /// `target` is a constant 0/1 tensor.
    pub fn bce_sum_loss(&mut self, probs: Value, target: &Tensor) -> Result<Value, TensorError> {
        const EPS: f64 = 1e-7;
        let tp = self.value(probs);
        if tp.shape() != target.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "bce_sum_loss",
                lhs: tp.shape(),
                rhs: target.shape(),
            });
        }
        let (rows, cols) = tp.shape();
        let mut total = 0.0;
        let mut grad = Tensor::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let p = tp.get(i, j);
                let clamped = p.clamp(EPS, 1.0 - EPS);
                let t = target.get(i, j);
                total -= t * clamped.ln() + (1.0 - t) * (1.0 - clamped).ln();
                // Where the clamp binds, the loss is locally constant in p.
                if p > EPS && p < 1.0 - EPS {
                    grad.set(i, j, (p - t) / (p * (1.0 - p)));
                }
            }
        }
        let out = Tensor::scalar(total);
        debug_check(&out, "bce_sum_loss");
        let out = self.push(out);
        self.records.push(Record::Loss {
            input: probs,
            grad,
            out,
        });
        Ok(out)
    }

    /// Replays the tape in reverse from the scalar `loss`, writes
    /// `d loss / d parameter` into each parameter lifted via [`Tape::param`],
    /// and clears the tape.
    pub fn backward(&mut self, loss: Value, params: &mut ParamSet) -> Result<(), TensorError> {
        let lt = self.value(loss);
        if lt.shape() != (1, 1) {
            return Err(TensorError::NotScalar {
                op: "backward",
                rows: lt.rows(),
                cols: lt.cols(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for record in self.records.iter().rev() {
            apply_adjoints(&self.nodes, &mut grads, record);
        }

        params.zero_grads();
        for &(id, node) in &self.leaves {
            if let Some(g) = &grads[node] {
                let slot = params.get_mut(id);
                for (dst, &src) in slot.grad.data_mut().iter_mut().zip(g.data()) {
                    *dst += src;
                }
            }
        }
        self.nodes.clear();
        self.records.clear();
        self.leaves.clear();
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], target: Value, contribution: Tensor) {
    match &mut grads[target.0] {
        Some(existing) => {
            for (dst, &src) in existing.data_mut().iter_mut().zip(contribution.data()) {
                *dst += src;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}

fn apply_adjoints(nodes: &[Tensor], grads: &mut [Option<Tensor>], record: &Record) {
    macro_rules! out_grad {
        ($out:expr) => {
            match &grads[$out.0] {
                Some(g) => g.clone(),
                None => return,
            }
        };
    }
    match record {
        Record::Matmul { a, b, out } => {
            let g = out_grad!(out);
            let ga = g.matmul(&nodes[b.0].transpose()).expect("shapes fixed");
            let gb = nodes[a.0].transpose().matmul(&g).expect("shapes fixed");
            accumulate(grads, *a, ga);
            accumulate(grads, *b, gb);
        }
        Record::Hadamard { a, b, out } => {
            let g = out_grad!(out);
            let mut ga = g.clone();
            for (v, &r) in ga.data_mut().iter_mut().zip(nodes[b.0].data()) {
                *v *= r;
            }
            let mut gb = g;
            for (v, &l) in gb.data_mut().iter_mut().zip(nodes[a.0].data()) {
                *v *= l;
            }
            accumulate(grads, *a, ga);
            accumulate(grads, *b, gb);
        }
        Record::Add { a, b, out } => {
            let g = out_grad!(out);
            accumulate(grads, *a, g.clone());
            accumulate(grads, *b, g);
        }
        Record::Scale { a, factor, out } => {
            let g = out_grad!(out);
            accumulate(grads, *a, g.map(|v| v * factor));
        }
        Record::AddScalar { a, out } => {
            let g = out_grad!(out);
            accumulate(grads, *a, g);
        }
        Record::Exp { a, out } => {
            let g = out_grad!(out);
            let mut ga = g;
            for (v, &e) in ga.data_mut().iter_mut().zip(nodes[out.0].data()) {
                *v *= e;
            }
            accumulate(grads, *a, ga);
        }
        Record::Expm1 { a, out } => {
            let g = out_grad!(out);
            let mut ga = g;
            for (v, &e) in ga.data_mut().iter_mut().zip(nodes[out.0].data()) {
                *v *= e + 1.0;
            }
            accumulate(grads, *a, ga);
        }
        Record::ConcatCols { a, b, out } => {
            let g = out_grad!(out);
            let (ra, ca) = nodes[a.0].shape();
            let cb = nodes[b.0].cols();
            let mut ga = Tensor::zeros(ra, ca);
            let mut gb = Tensor::zeros(ra, cb);
            for i in 0..ra {
                for j in 0..ca {
                    ga.set(i, j, g.get(i, j));
                }
                for j in 0..cb {
                    gb.set(i, j, g.get(i, ca + j));
                }
            }
            accumulate(grads, *a, ga);
            accumulate(grads, *b, gb);
        }
        Record::ConcatRows { a, b, out } => {
            let g = out_grad!(out);
            let (ra, ca) = nodes[a.0].shape();
            let rb = nodes[b.0].rows();
            let ga = Tensor::from_vec(ra, ca, g.data()[..ra * ca].to_vec()).expect("split");
            let gb = Tensor::from_vec(rb, ca, g.data()[ra * ca..].to_vec()).expect("split");
            accumulate(grads, *a, ga);
            accumulate(grads, *b, gb);
        }
        Record::Reshape { a, out } => {
            let g = out_grad!(out);
            let (ra, ca) = nodes[a.0].shape();
            let ga = Tensor::from_vec(ra, ca, g.data().to_vec()).expect("same length");
            accumulate(grads, *a, ga);
        }
        Record::Transpose { a, out } => {
            let g = out_grad!(out);
            accumulate(grads, *a, g.transpose());
        }
        Record::Sigmoid { a, out } => {
            let g = out_grad!(out);
            let mut ga = g;
            for (v, &s) in ga.data_mut().iter_mut().zip(nodes[out.0].data()) {
                *v *= s * (1.0 - s);
            }
            accumulate(grads, *a, ga);
        }
        Record::Relu { a, out } => {
            let g = out_grad!(out);
            let mut ga = g;
            for (v, &x) in ga.data_mut().iter_mut().zip(nodes[a.0].data()) {
                if x <= 0.0 {
                    *v = 0.0;
                }
            }
            accumulate(grads, *a, ga);
        }
        Record::SoftmaxRows { a, out } => {
            let g = out_grad!(out);
            let s = &nodes[out.0];
            let (rows, cols) = s.shape();
            let mut ga = Tensor::zeros(rows, cols);
            for i in 0..rows {
                let dot: f64 = (0..cols).map(|j| g.get(i, j) * s.get(i, j)).sum();
                for j in 0..cols {
                    ga.set(i, j, s.get(i, j) * (g.get(i, j) - dot));
                }
            }
            accumulate(grads, *a, ga);
        }
        Record::Dropout { a, mask, out } => {
            let g = out_grad!(out);
            let mut ga = g;
            for (v, &m) in ga.data_mut().iter_mut().zip(mask.data()) {
                *v *= m;
            }
            accumulate(grads, *a, ga);
        }
        Record::AddRowBias { x, bias, out } => {
            let g = out_grad!(out);
            let mut gb = Tensor::zeros(1, nodes[bias.0].cols());
            for i in 0..g.rows() {
                for j in 0..g.cols() {
                    gb.set(0, j, gb.get(0, j) + g.get(i, j));
                }
            }
            accumulate(grads, *x, g);
            accumulate(grads, *bias, gb);
        }
        Record::MaskedMeanRows {
            x,
            mask,
            count,
            out,
        } => {
            let g = out_grad!(out);
            let (rows, cols) = nodes[x.0].shape();
            let mut gx = Tensor::zeros(rows, cols);
            for i in 0..rows {
                if mask[i] == 0.0 {
                    continue;
                }
                for j in 0..cols {
                    gx.set(i, j, g.get(0, j) / *count as f64);
                }
            }
            accumulate(grads, *x, gx);
        }
        Record::SumAll { a, out } => {
            let g = out_grad!(out);
            let v = g.get(0, 0);
            let (rows, cols) = nodes[a.0].shape();
            accumulate(grads, *a, Tensor::filled(rows, cols, v));
        }
        Record::Loss { input, grad, out } => {
            let g = out_grad!(out);
            let scale = g.get(0, 0);
            accumulate(grads, *input, grad.map(|v| v * scale));
        }
    }
}
