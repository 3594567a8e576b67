//! Central finite-difference gradient checking.
//!
//! The relative error for one coordinate is
//! `|analytic − numeric| / max(|analytic|, |numeric|, floor·max(1, |loss|))`;
//! the floor keeps coordinates whose true gradient is ~0 from being judged
//! purely on floating-point noise. Coordinates whose `±h` probes land on
//! different sides of a relu kink are skipped and counted, since the central
//! difference is meaningless there.

use super::{GradStore, Mode, Module};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Denominator floor for the relative error.
pub const DEFAULT_ABS_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug)]
pub struct Evaluation {
    pub loss: f64,
    /// Relu on/off pattern hash; equal signatures mean the same linear piece.
    pub kink_signature: u64,
}

/// A scalar objective with analytically differentiable named inputs.
pub trait GradCheckable {
    fn evaluate(&mut self) -> Result<Evaluation>;

    /// Analytic gradient of the objective at the current point.
    fn gradients(&mut self) -> Result<GradStore>;

    /// Visits every differentiable value (parameters and, optionally, inputs).
    fn visit_values_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub checked: usize,
    pub skipped_kinks: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| p.max_rel_error < self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params
            .iter()
            .filter(|p| p.max_rel_error >= self.tolerance)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_error)
            .fold(0.0, f64::max)
    }
}

pub fn grad_check(target: &mut dyn GradCheckable, h: f64, tol: f64) -> Result<GradCheckReport> {
    grad_check_with_floor(target, h, tol, DEFAULT_ABS_FLOOR)
}

pub fn grad_check_with_floor(
    target: &mut dyn GradCheckable,
    h: f64,
    tol: f64,
    floor: f64,
) -> Result<GradCheckReport> {
    if !(h > 0.0) {
        return Err(Error::Argument(format!("step h must be positive, got {h}")));
    }
    let analytic = target.gradients()?;
    // Central differences carry roundoff of order ε·|loss|/h, so the floor
    // scales with the loss.
    let floor = floor * target.evaluate()?.loss.abs().max(1.0);
    let mut sizes = Vec::new();
    target.visit_values_mut(&mut |name, t| sizes.push((name.to_string(), t.len())));

    let mut params = Vec::with_capacity(sizes.len());
    for (name, len) in sizes {
        let grad = analytic
            .get(&name)
            .ok_or_else(|| Error::Consistency(format!("no analytic gradient for {name}")))?
            .clone();
        if grad.len() != len {
            return Err(Error::Consistency(format!(
                "gradient shape mismatch for {name}"
            )));
        }
        let mut check = ParamCheck {
            name: name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            checked: 0,
            skipped_kinks: 0,
        };
        for i in 0..len {
            let original = read(target, &name, i);
            write(target, &name, i, original + h);
            let plus = target.evaluate()?;
            write(target, &name, i, original - h);
            let minus = target.evaluate()?;
            write(target, &name, i, original);
            if plus.kink_signature != minus.kink_signature {
                check.skipped_kinks += 1;
                continue;
            }
            let numeric = (plus.loss - minus.loss) / (2.0 * h);
            let a = grad.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            check.checked += 1;
            if rel > check.max_rel_error || rel.is_nan() {
                check.max_rel_error = if rel.is_nan() { f64::INFINITY } else { rel };
                check.worst_index = i;
            }
        }
        params.push(check);
    }
    Ok(GradCheckReport {
        tolerance: tol,
        params,
    })
}

fn read(target: &mut dyn GradCheckable, name: &str, i: usize) -> f64 {
    let mut v = f64::NAN;
    target.visit_values_mut(&mut |n, t| {
        if n == name {
            v = t.data()[i];
        }
    });
    v
}

fn write(target: &mut dyn GradCheckable, name: &str, i: usize, value: f64) {
    target.visit_values_mut(&mut |n, t| {
        if n == name {
            t.data_mut()[i] = value;
        }
    });
}

/// Checks one module under the objective `Σ c ⊙ forward(x)`. The input is
/// exposed as the value `"input"` so its gradient is checked too.
pub struct ModuleProbe<M: Module> {
    pub module: M,
    pub x: Tensor,
    pub weights: Tensor,
    pub mode: Mode,
}

impl<M: Module> ModuleProbe<M> {
    pub fn new(module: M, x: Tensor, weights: Tensor, mode: Mode) -> Self {
        Self {
            module,
            x,
            weights,
            mode,
        }
    }

    fn loss(&mut self) -> Result<f64> {
        let y = self.module.forward(&self.x, self.mode)?;
        if y.shape() != self.weights.shape() {
            return Err(Error::Dimension(format!(
                "probe weights {:?} do not match output {:?}",
                self.weights.shape(),
                y.shape()
            )));
        }
        Ok(y.data()
            .iter()
            .zip(self.weights.data())
            .map(|(a, b)| a * b)
            .sum())
    }
}

impl<M: Module> GradCheckable for ModuleProbe<M> {
    fn evaluate(&mut self) -> Result<Evaluation> {
        let loss = self.loss()?;
        let mut sig = 0;
        self.module.relu_signature(&mut sig);
        Ok(Evaluation {
            loss,
            kink_signature: sig,
        })
    }

    fn gradients(&mut self) -> Result<GradStore> {
        self.module.zero_grad();
        self.loss()?;
        let dx = self.module.backward(&self.weights.clone())?;
        let mut g = GradStore::collect(&self.module);
        g.insert("input", dx);
        Ok(g)
    }

    fn visit_values_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.module
            .visit_params_mut("", &mut |n, p| f(n, &mut p.value));
        f("input", &mut self.x);
    }
}
