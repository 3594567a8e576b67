//! Adam with bias correction, plus the L2 penalty on convolution kernels.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::{GradStore, ParamKind, Parameterized};
use crate::tensor::Tensor;

pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// L2 strength on conv kernels.
    pub weight_decay: f64,
}

impl OptimHyper {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: DEFAULT_WEIGHT_DECAY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Argument(format!(
                "invalid optimizer settings {self:?}"
            )))
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
    pub t: u64,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One Adam update of every parameter of `model` using `grads`.
///
/// All gradients are checked before anything is mutated, so a missing or
/// mis-shaped gradient leaves both model and state untouched.
pub fn adam_step(
    model: &mut dyn Parameterized,
    grads: &GradStore,
    state: &mut AdamState,
    hyper: &OptimHyper,
) -> Result<()> {
    hyper.validate()?;
    let mut problem = None;
    model.visit_params("", &mut |name, p| {
        if problem.is_some() {
            return;
        }
        match grads.get(name) {
            None => problem = Some(format!("missing gradient for parameter {name}")),
            Some(g) if g.shape() != p.value.shape() => {
                problem = Some(format!(
                    "gradient for {name} has shape {:?}, parameter has {:?}",
                    g.shape(),
                    p.value.shape()
                ))
            }
            _ => {}
        }
    });
    if let Some(msg) = problem {
        return Err(Error::Consistency(msg));
    }

    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    let (m_all, v_all) = (&mut state.m, &mut state.v);
    model.visit_params_mut("", &mut |name, p| {
        let g = grads.get(name).expect("checked above");
        let m = m_all
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(p.value.shape()));
        let v = v_all
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(p.value.shape()));
        let iter = p
            .value
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data());
        for (((theta, m), v), &g) in iter {
            *m = hyper.beta1 * *m + (1.0 - hyper.beta1) * g;
            *v = hyper.beta2 * *v + (1.0 - hyper.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *theta -= hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.epsilon);
        }
    });
    Ok(())
}

/// `λ·Σw²` over conv kernels and its gradient `2λw`. Other parameters get no
/// entry in the returned store.
pub fn l2_penalty(model: &dyn Parameterized, lambda: f64) -> (f64, GradStore) {
    let mut penalty = 0.0;
    let mut grads = GradStore::new();
    model.visit_params("", &mut |name, p| {
        if p.kind == ParamKind::ConvKernel {
            penalty += lambda * p.value.sum_sq();
            grads.insert(name, p.value.map(|w| 2.0 * lambda * w));
        }
    });
    (penalty, grads)
}

/// Adds the L2 gradient directly into the accumulated conv-kernel gradients.
pub fn apply_l2(model: &mut dyn Parameterized, lambda: f64) -> f64 {
    let mut penalty = 0.0;
    if lambda == 0.0 {
        return penalty;
    }
    model.visit_params_mut("", &mut |_, p| {
        if p.kind == ParamKind::ConvKernel {
            penalty += lambda * p.value.sum_sq();
            for (g, w) in p.grad.data_mut().iter_mut().zip(p.value.data()) {
                *g += 2.0 * lambda * w;
            }
        }
    });
    penalty
}
