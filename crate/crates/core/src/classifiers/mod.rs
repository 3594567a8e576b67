//! Detection heads and their training loops.

mod lbd;
mod llc;
mod model;

pub use lbd::{
    fit_detector, lbd_classify, lbd_stage1_train, lbd_stage2_train, stage1_eval, state_checksum,
    train_lbd, LbdDetector, LbdObjective, LbdRun, Stage1Objective, Verdict,
};
pub use llc::{llc_predict, train_llc, LlcHead, LlcObjective};
pub use model::{FlowClassifier, Head, TrainedModel};

use crate::data::{Dataset, Preprocessor};
use crate::error::{Error, Result};
use crate::nn::{Activation, Mode, Module};
use crate::preset::Preset;
use crate::tensor::Tensor;
use crate::vae::{
    kl_grad, kl_loss, reconstruction_grad, reconstruction_loss, sample_latent_with, VaeModel,
};

pub const DEFAULT_BATCH_SIZE: usize = 1024;
pub const DEFAULT_LOG_INTERVAL: usize = 50;

/// Run-level knobs layered over a preset.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOptions {
    pub batch_size: usize,
    pub log_interval: usize,
    /// Overrides the preset's (stage-1) step count.
    pub steps: Option<usize>,
    /// Overrides the stage-2 step count.
    pub steps2: Option<usize>,
    pub learning_rate: Option<f64>,
    /// Overrides the stage-2 learning rate (defaults to the preset's).
    pub stage2_learning_rate: Option<f64>,
    pub channels: usize,
    pub weight_decay: f64,
    /// Pre-fitted preprocessing; fitted on the training data when `None`.
    pub preprocessor: Option<Preprocessor>,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            batch_size: DEFAULT_BATCH_SIZE,
            log_interval: DEFAULT_LOG_INTERVAL,
            steps: None,
            steps2: None,
            learning_rate: None,
            stage2_learning_rate: None,
            channels: crate::vae::DEFAULT_CHANNELS,
            weight_decay: crate::optim::DEFAULT_WEIGHT_DECAY,
            preprocessor: None,
        }
    }
}

impl TrainOptions {
    pub(crate) fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.log_interval == 0 {
            return Err(Error::Argument(
                "batch size and log interval must be ≥ 1".into(),
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Argument("weight decay must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// Fits feature selection and scaling for `preset` on `train`; `test` joins
/// the bounds sample for the pooled min-max strategy.
pub fn fit_preprocessor(
    train: &Dataset,
    preset: &Preset,
    test: Option<&Dataset>,
) -> Result<Preprocessor> {
    Preprocessor::fit(train, &preset.features.names(), preset.scaling, test)
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if logits.shape().len() != 2 || logits.rows() != labels.len() {
        return Err(Error::Dimension(format!(
            "logits {:?} do not match {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    let (b, c) = (logits.rows(), logits.row_len());
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Argument(format!("label {bad} outside {c} classes")));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(b * c);
    for (r, &y) in labels.iter().enumerate() {
        let row = logits.row(r);
        let (imax, m) = row
            .iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc },
            );
        // ln Σ exp(l − m) = ln(1 + Σ_{j≠imax} exp(l_j − m)) keeps tiny losses exact.
        let rest: f64 = row
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != imax)
            .map(|(_, &v)| (v - m).exp())
            .sum();
        loss += (m - row[y]) + rest.ln_1p();
        let denom = 1.0 + rest;
        for (i, &v) in row.iter().enumerate() {
            let p = if i == imax {
                1.0 / denom
            } else {
                (v - m).exp() / denom
            };
            grad.push((p - f64::from(u8::from(i == y))) / b as f64);
        }
    }
    Ok((loss / b as f64, Tensor::new(vec![b, c], grad)?))
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn accuracy_of(probs_or_logits: &Tensor, labels: &[usize]) -> f64 {
    let hits = labels
        .iter()
        .enumerate()
        .filter(|(r, &y)| argmax(probs_or_logits.row(*r)) == y)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

/// Loss terms of one objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Objective {
    pub p: bool,
    pub r: bool,
    /// KL multiplier, `None` when the term is off.
    pub kl: Option<f64>,
}

impl Objective {
    pub fn from_preset(preset: &Preset) -> Self {
        Self {
            p: preset.losses.p,
            r: preset.losses.r,
            kl: preset.losses.kl.then(|| preset.kl_weight()),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct StepMetrics {
    pub accuracy: Option<f64>,
    pub p: Option<f64>,
    pub r: Option<f64>,
    pub kl: Option<f64>,
    pub total: f64,
}

/// One train-mode pass of the joint objective with fixed noise `eps`. When
/// `backward` is set, gradients are accumulated into every parameter.
pub(crate) fn forward_backward(
    vae: &mut VaeModel,
    mut head: Option<&mut LlcHead>,
    x: &Tensor,
    labels: &[usize],
    eps: Tensor,
    obj: Objective,
    backward: bool,
) -> Result<StepMetrics> {
    let (mu, logvar) = vae.encode_forward(x, Mode::Train)?;
    let sample = sample_latent_with(&mu, &logvar, eps)?;
    let mut m = StepMetrics::default();
    let mut dz = Tensor::zeros(sample.z.shape());

    if obj.p {
        let head = head
            .as_deref_mut()
            .ok_or_else(|| Error::State("P-loss requested without a classifier head".into()))?;
        let logits = head.dense.forward(&sample.z, Mode::Train)?;
        let (p, dlogits) = softmax_xent(&logits, labels)?;
        m.accuracy = Some(accuracy_of(&logits, labels));
        m.p = Some(p);
        m.total += p;
        if backward {
            dz.add_assign(&head.dense.backward(&dlogits)?)?;
        }
    }
    if obj.r {
        let x_hat = vae.decode_forward(&sample.z, Mode::Train)?;
        let r = reconstruction_loss(x, &x_hat)?;
        m.r = Some(r);
        m.total += r;
        if backward {
            dz.add_assign(&vae.decoder_backward(&reconstruction_grad(x, &x_hat)?)?)?;
        }
    }
    if let Some(klm) = obj.kl {
        let kl = kl_loss(&mu, &logvar)?;
        m.kl = Some(kl);
        m.total += klm * kl;
    }
    if backward {
        // z = μ + exp(lv/2)·ε
        let mut d_mu = dz.clone();
        let mut d_lv = dz;
        for ((g, lv), e) in d_lv
            .data_mut()
            .iter_mut()
            .zip(logvar.data())
            .zip(sample.eps.data())
        {
            *g *= e * 0.5 * (lv / 2.0).exp();
        }
        if let Some(klm) = obj.kl {
            let (gm, gl) = kl_grad(&mu, &logvar)?;
            d_mu.add_assign(&gm.map(|v| klm * v))?;
            d_lv.add_assign(&gl.map(|v| klm * v))?;
        }
        vae.encoder_backward(&d_mu, &d_lv)?;
    }
    Ok(m)
}

/// Mean metrics over a whole split through `μ`, batch norm in inference mode.
pub(crate) fn sweep(
    vae: &VaeModel,
    head: Option<&LlcHead>,
    x: &Tensor,
    labels: &[usize],
    obj: Objective,
    chunk: usize,
) -> Result<StepMetrics> {
    let n = x.rows();
    let (mut acc, mut p, mut r, mut kl) = (0.0, 0.0, 0.0, 0.0);
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let idx: Vec<usize> = (start..end).collect();
        let xb = x.gather_rows(&idx)?;
        let yb = &labels[start..end];
        let w = (end - start) as f64;
        let (mu, logvar) = vae.encode(&xb)?;
        if obj.p {
            let head = head
                .ok_or_else(|| Error::State("P-loss requested without a classifier head".into()))?;
            let logits = head.logits(&mu)?;
            acc += w * accuracy_of(&logits, yb);
            p += w * softmax_xent(&logits, yb)?.0;
        }
        if obj.r {
            r += w * reconstruction_loss(&xb, &vae.decode(&mu)?)?;
        }
        if obj.kl.is_some() {
            kl += w * kl_loss(&mu, &logvar)?;
        }
        start = end;
    }
    let n = n as f64;
    let mut m = StepMetrics::default();
    if obj.p {
        m.accuracy = Some(acc / n);
        m.p = Some(p / n);
        m.total += p / n;
    }
    if obj.r {
        m.r = Some(r / n);
        m.total += r / n;
    }
    if let Some(klm) = obj.kl {
        m.kl = Some(kl / n);
        m.total += klm * kl / n;
    }
    Ok(m)
}

pub(crate) fn log_row(
    step: usize,
    split: crate::metrics::Split,
    m: &StepMetrics,
) -> crate::metrics::TrainLogRow {
    crate::metrics::TrainLogRow {
        step,
        split,
        accuracy: m.accuracy,
        p_loss: m.p,
        kl_loss: m.kl,
        r_loss: m.r,
        total_loss: m.total,
    }
}

pub(crate) fn softmax_rows(logits: &Tensor) -> Tensor {
    crate::nn::activation_forward(logits, Activation::Softmax)
}
