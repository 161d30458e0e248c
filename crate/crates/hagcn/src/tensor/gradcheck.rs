//! Finite-difference gradient checking.
//!
//! The numeric side perturbs every parameter entry by +/- epsilon and takes
//! central differences of the scalar loss; the analytic side runs one
//! backward pass. The two are computed along fully independent paths, so
//! agreement certifies the adjoints. The program under test must be
//! deterministic across evaluations (seeded dropout qualifies, fresh random
//! draws do not).

use super::{ParamSet, Tape, Tensor, TensorError, Value};

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub max_rel_error: f64,
    /// Parameter name and flat entry index where the worst error occurred.
    pub worst: Option<(String, usize)>,
    pub epsilon: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn summary_line(&self) -> String {
        let worst = match &self.worst {
            Some((name, idx)) => format!(" at {name}[{idx}]"),
            None => String::new(),
        };
        format!(
            "{}: max relative error {:.3e}{} (tolerance {:.0e}) {}",
            self.name,
            self.max_rel_error,
            worst,
            self.tolerance,
            if self.passed { "pass" } else { "FAIL" }
        )
    }
}

fn eval_scalar<F>(params: &ParamSet, f: &mut F) -> Result<f64, TensorError>
where
    F: FnMut(&mut Tape, &ParamSet) -> Result<Value, TensorError>,
{
    let mut tape = Tape::new();
    let out = f(&mut tape, params)?;
    tape.scalar(out)
}

/// Central-difference gradients of the scalar program `f` with respect to
/// every parameter entry, in parameter id order.
pub fn fd_gradients<F>(
    params: &mut ParamSet,
    f: &mut F,
    epsilon: f64,
) -> Result<Vec<Tensor>, TensorError>
where
    F: FnMut(&mut Tape, &ParamSet) -> Result<Value, TensorError>,
{
    let ids: Vec<_> = params.ids().collect();
    let mut grads = Vec::with_capacity(ids.len());
    for &id in &ids {
        let (rows, cols) = params.get(id).value.shape();
        let mut grad = Tensor::zeros(rows, cols);
        for idx in 0..rows * cols {
            let original = params.get(id).value.data()[idx];
            params.get_mut(id).value.data_mut()[idx] = original + epsilon;
            let plus = eval_scalar(params, f)?;
            params.get_mut(id).value.data_mut()[idx] = original - epsilon;
            let minus = eval_scalar(params, f)?;
            params.get_mut(id).value.data_mut()[idx] = original;
            grad.data_mut()[idx] = (plus - minus) / (2.0 * epsilon);
        }
        grads.push(grad);
    }
    Ok(grads)
}

/// Guarded relative error: plain relative error for large gradients, absolute
/// error for gradients below one, so near-zero entries are not judged by
/// floating-point noise alone.
pub(crate) fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / f64::max(1.0, analytic.abs() + numeric.abs())
}

/// Runs both gradient routes for `f` and reports the worst disagreement.
pub fn finite_difference_check<F>(
    name: &str,
    params: &mut ParamSet,
    mut f: F,
    epsilon: f64,
    tolerance: f64,
) -> Result<GradCheckReport, TensorError>
where
    F: FnMut(&mut Tape, &ParamSet) -> Result<Value, TensorError>,
{
    let mut tape = Tape::new();
    let loss = f(&mut tape, params)?;
    tape.backward(loss, params)?;
    let analytic: Vec<Tensor> = params.ids().map(|id| params.get(id).grad.clone()).collect();

    let numeric = fd_gradients(params, &mut f, epsilon)?;

    let mut max_rel_error = 0.0;
    let mut worst = None;
    for (id, (a, n)) in params.ids().zip(analytic.iter().zip(&numeric)) {
        for (idx, (&av, &nv)) in a.data().iter().zip(n.data()).enumerate() {
            let rel = relative_error(av, nv);
            if rel > max_rel_error || !rel.is_finite() {
                max_rel_error = rel;
                worst = Some((params.get(id).name.clone(), idx));
            }
        }
    }
    let passed = max_rel_error.is_finite() && max_rel_error <= tolerance;
    Ok(GradCheckReport {
        name: name.to_string(),
        max_rel_error,
        worst,
        epsilon,
        tolerance,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ParamKind;

    #[test]
    fn linear_program_checks_nearly_exactly() {
        let mut params = ParamSet::new();
        params.register(
            "w",
            ParamKind::Weight,
            Tensor::from_rows(vec![vec![0.3, -0.7]]).unwrap(),
        );
        let report = finite_difference_check(
            "linear",
            &mut params,
            |tape, params| {
                let w = tape.param(params, params.by_name("w").unwrap());
                let scaled = tape.scale(w, 3.0);
                Ok(tape.sum_all(scaled))
            },
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{}", report.summary_line());
        assert!(report.max_rel_error < 1e-8, "{}", report.summary_line());
    }

    #[test]
    fn composed_nonlinear_program_passes() {
        let mut params = ParamSet::new();
        params.register(
            "w",
            ParamKind::Weight,
            Tensor::from_rows(vec![vec![0.4, -0.3], vec![0.9, 0.2]]).unwrap(),
        );
        params.register(
            "b",
            ParamKind::Bias,
            Tensor::from_rows(vec![vec![0.1, -0.2]]).unwrap(),
        );
        let x = Tensor::from_rows(vec![vec![1.0, -0.5], vec![0.25, 2.0]]).unwrap();
        let target = Tensor::from_rows(vec![vec![0.3, 0.7], vec![0.9, 0.1]]).unwrap();
        let report = finite_difference_check(
            "sigmoid-affine-mse",
            &mut params,
            move |tape, params| {
                let w = tape.param(params, params.by_name("w").unwrap());
                let b = tape.param(params, params.by_name("b").unwrap());
                let xv = tape.constant(x.clone());
                let h = tape.matmul(xv, w)?;
                let h = tape.add_row_bias(h, b)?;
                let s = tape.sigmoid(h);
                tape.mse_loss(s, &target, &[1.0, 1.0])
            },
            1e-6,
            1e-4,
        )
        .unwrap();
        assert!(report.passed, "{}", report.summary_line());
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let mut params = ParamSet::new();
        params.register(
            "w",
            ParamKind::Weight,
            Tensor::from_rows(vec![vec![0.5, 1.5]]).unwrap(),
        );
        let mut f = |tape: &mut Tape, params: &ParamSet| {
            let w = tape.param(params, params.by_name("w").unwrap());
            let sq = tape.hadamard(w, w)?;
            Ok(tape.sum_all(sq))
        };
        let numeric = fd_gradients(&mut params, &mut f, 1e-6).unwrap();

        let mut tape = Tape::new();
        let loss = f(&mut tape, &params).unwrap();
        tape.backward(loss, &mut params).unwrap();
        let id = params.by_name("w").unwrap();
        // Corrupt one adjoint entry and confirm the comparison flags it.
        let corrupted = params.get(id).grad.map(|v| v + 1.0);
        let worst = corrupted
            .data()
            .iter()
            .zip(numeric[0].data())
            .map(|(&a, &n)| relative_error(a, n))
            .fold(0.0, f64::max);
        assert!(worst > 1e-4, "corruption slipped through: {worst}");
    }
}
