//! Parameter updates: plain SGD and Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::tensor::{ParamSet, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Applies gradient updates to a parameter set. Adam moment buffers are
/// allocated lazily, one pair per parameter.
pub struct Optimizer {
    kind: OptimizerKind,
    learning_rate: f64,
    step_count: u32,
    moments: Vec<Option<(Tensor, Tensor)>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64) -> Self {
        Optimizer {
            kind,
            learning_rate,
            step_count: 0,
            moments: Vec::new(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    /// One update from the gradients currently stored in `params`.
    pub fn step(&mut self, params: &mut ParamSet) {
        match self.kind {
            OptimizerKind::Sgd => {
                for id in params.ids().collect::<Vec<_>>() {
                    let lr = self.learning_rate;
                    let p = params.get_mut(id);
                    let grads = p.grad.data().to_vec();
                    for (v, g) in p.value.data_mut().iter_mut().zip(grads) {
                        *v -= lr * g;
                    }
                }
            }
            OptimizerKind::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                self.step_count += 1;
                let t = self.step_count as i32;
                let correction1 = 1.0 - beta1.powi(t);
                let correction2 = 1.0 - beta2.powi(t);
                if self.moments.len() < params.len() {
                    self.moments.resize(params.len(), None);
                }
                for (idx, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
                    let lr = self.learning_rate;
                    let p = params.get_mut(id);
                    let (m, v) = self.moments[idx].get_or_insert_with(|| {
                        (
                            Tensor::zeros(p.value.rows(), p.value.cols()),
                            Tensor::zeros(p.value.rows(), p.value.cols()),
                        )
                    });
                    let grads = p.grad.data().to_vec();
                    for (((val, g), mi), vi) in p
                        .value
                        .data_mut()
                        .iter_mut()
                        .zip(grads)
                        .zip(m.data_mut())
                        .zip(v.data_mut())
                    {
                        *mi = beta1 * *mi + (1.0 - beta1) * g;
                        *vi = beta2 * *vi + (1.0 - beta2) * g * g;
                        let m_hat = *mi / correction1;
                        let v_hat = *vi / correction2;
                        *val -= lr * m_hat / (v_hat.sqrt() + epsilon);
                    }
                }
            }
        }
    }
}
