use super::{join, no_cache, Mode, Module, Param, ParamKind, Parameterized};
use crate::error::{dim_err, Error, Result};
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPSILON: f64 = 1e-5;

/// Batch normalization over the last axis.
///
/// Every other axis counts as a sample, so a `[B × L × C]` conv activation is
/// normalized per channel over `B·L` values and a `[B × F]` dense activation
/// per feature over `B` values. Running statistics follow
/// `running = momentum · running + (1 − momentum) · batch` and use the biased
/// batch variance.
#[derive(Clone, Debug)]
pub struct BatchNorm1D {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
    cache: Option<BnCache>,
}

#[derive(Clone, Debug)]
enum BnCache {
    Train { x_hat: Tensor, inv_std: Vec<f64> },
    Infer { input: Tensor },
}

impl BatchNorm1D {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::filled(&[channels], 1.0), ParamKind::Gamma),
            beta: Param::new(Tensor::zeros(&[channels]), ParamKind::Beta),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        self.gamma.value.expect_shape(&[c])?;
        self.beta.value.expect_shape(&[c])?;
        if self.running_var.len() != c || self.running_var.iter().any(|v| *v < 0.0) {
            return Err(Error::Consistency(
                "batch norm running variance must be ≥ 0".into(),
            ));
        }
        if !(self.epsilon > 0.0) || !(self.momentum > 0.0 && self.momentum < 1.0) {
            return Err(Error::Consistency(format!(
                "batch norm needs epsilon > 0 and momentum in (0,1), got {} / {}",
                self.epsilon, self.momentum
            )));
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() < 2 || *x.shape().last().unwrap() != self.channels() {
            return dim_err(format!(
                "batch norm over {} channels got shape {:?}",
                self.channels(),
                x.shape()
            ));
        }
        Ok(())
    }

    fn batch_stats(&self, x: &Tensor) -> (Vec<f64>, Vec<f64>) {
        let c = self.channels();
        let n = (x.len() / c) as f64;
        let mut mean = vec![0.0; c];
        for row in x.data().chunks(c) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; c];
        for row in x.data().chunks(c) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n);
        (mean, var)
    }

    fn normalize(&self, x: &Tensor, mean: &[f64], var: &[f64]) -> (Tensor, Tensor, Vec<f64>) {
        let c = self.channels();
        let inv_std: Vec<f64> = var
            .iter()
            .map(|v| 1.0 / (v + self.epsilon).sqrt())
            .collect();
        let mut x_hat = x.clone();
        for row in x_hat.data_mut().chunks_mut(c) {
            for ((v, m), s) in row.iter_mut().zip(mean).zip(&inv_std) {
                *v = (*v - m) * s;
            }
        }
        let mut y = x_hat.clone();
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        for row in y.data_mut().chunks_mut(c) {
            for ((v, gi), bi) in row.iter_mut().zip(g).zip(b) {
                *v = *v * gi + bi;
            }
        }
        (y, x_hat, inv_std)
    }
}

/// Functional form: normalizes `x` in the given mode, updating running
/// statistics in train mode.
pub fn batchnorm_forward(x: &Tensor, bn: &mut BatchNorm1D, mode: Mode) -> Result<Tensor> {
    bn.forward(x, mode)
}

impl Parameterized for BatchNorm1D {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

impl Module for BatchNorm1D {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_input(x)?;
        match mode {
            Mode::Infer => {
                let y = self.infer(x)?;
                self.cache = Some(BnCache::Infer { input: x.clone() });
                Ok(y)
            }
            Mode::Train => {
                if x.rows() < 2 {
                    return Err(Error::Data(
                        "batch norm in train mode needs a batch of at least 2".into(),
                    ));
                }
                let (mean, var) = self.batch_stats(x);
                let (y, x_hat, inv_std) = self.normalize(x, &mean, &var);
                let m = self.momentum;
                for (r, b) in self.running_mean.iter_mut().zip(&mean) {
                    *r = m * *r + (1.0 - m) * b;
                }
                for (r, b) in self.running_var.iter_mut().zip(&var) {
                    *r = m * *r + (1.0 - m) * b;
                }
                self.cache = Some(BnCache::Train { x_hat, inv_std });
                Ok(y)
            }
        }
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        Ok(self.normalize(x, &self.running_mean, &self.running_var).0)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let c = self.channels();
        match self.cache.take() {
            None => no_cache("batch norm"),
            Some(BnCache::Infer { input }) => {
                grad.expect_shape(input.shape())?;
                let inv_std: Vec<f64> = self
                    .running_var
                    .iter()
                    .map(|v| 1.0 / (v + self.epsilon).sqrt())
                    .collect();
                let gamma = self.gamma.value.data().to_vec();
                let mut dx = grad.clone();
                for (dr, xr) in dx.data_mut().chunks_mut(c).zip(input.data().chunks(c)) {
                    for i in 0..c {
                        let x_hat = (xr[i] - self.running_mean[i]) * inv_std[i];
                        self.beta.grad.data_mut()[i] += dr[i];
                        self.gamma.grad.data_mut()[i] += dr[i] * x_hat;
                        dr[i] *= gamma[i] * inv_std[i];
                    }
                }
                Ok(dx)
            }
            Some(BnCache::Train { x_hat, inv_std }) => {
                grad.expect_shape(x_hat.shape())?;
                let n = (x_hat.len() / c) as f64;
                let mut sum_g = vec![0.0; c];
                let mut sum_gx = vec![0.0; c];
                for (gr, xr) in grad.data().chunks(c).zip(x_hat.data().chunks(c)) {
                    for i in 0..c {
                        sum_g[i] += gr[i];
                        sum_gx[i] += gr[i] * xr[i];
                    }
                }
                for i in 0..c {
                    self.beta.grad.data_mut()[i] += sum_g[i];
                    self.gamma.grad.data_mut()[i] += sum_gx[i];
                }
                let gamma = self.gamma.value.data();
                let mut dx = grad.clone();
                for (dr, xr) in dx.data_mut().chunks_mut(c).zip(x_hat.data().chunks(c)) {
                    for i in 0..c {
                        dr[i] =
                            gamma[i] * inv_std[i] / n * (n * dr[i] - sum_g[i] - xr[i] * sum_gx[i]);
                    }
                }
                Ok(dx)
            }
        }
    }

    fn relu_signature(&self, _acc: &mut u64) {}
}
