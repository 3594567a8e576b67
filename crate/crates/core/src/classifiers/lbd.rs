use super::{
    fit_preprocessor, forward_backward, log_row, sweep, Head, Objective, TrainOptions, TrainedModel,
};
use crate::data::{batches, Dataset, FeatureSchema};
use crate::error::{Error, Result};
use crate::metrics::{Split, TrainLogRow};
use crate::nn::{Evaluation, GradCheckable, GradStore, Param, ParamKind, Parameterized};
use crate::optim::{adam_step, apply_l2, AdamState, OptimHyper};
use crate::preset::{Family, Preset};
use crate::rng::RngStream;
use crate::tensor::Tensor;
use crate::vae::VaeModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Benign,
    Malicious,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Benign => crate::data::BENIGN,
            Verdict::Malicious => crate::data::MALICIOUS,
        }
    }
}

/// Logistic decision on the scalar reconstruction loss: malicious iff
/// `σ(w·r + b) ≥ 0.5`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LbdDetector {
    pub w: f64,
    pub b: f64,
}

pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

impl LbdDetector {
    pub fn score(&self, r: f64) -> f64 {
        sigmoid(self.w * r + self.b)
    }

    pub fn decide(&self, r: f64) -> (Verdict, f64) {
        let s = self.score(r);
        let v = if s >= 0.5 {
            Verdict::Malicious
        } else {
            Verdict::Benign
        };
        (v, s)
    }
}

/// Mean binary cross-entropy of `σ(w·r + b)` and its gradient in `(w, b)`.
pub(crate) fn bce(w: f64, b: f64, r: &[f64], malicious: &[bool]) -> (f64, f64, f64) {
    let n = r.len().max(1) as f64;
    let (mut loss, mut gw, mut gb) = (0.0, 0.0, 0.0);
    for (&ri, &y) in r.iter().zip(malicious) {
        let t = w * ri + b;
        // −[y ln σ(t) + (1−y) ln(1−σ(t))] = softplus(t) − y·t
        loss += softplus(t) - if y { t } else { 0.0 };
        let d = sigmoid(t) - f64::from(u8::from(y));
        gw += d * ri;
        gb += d;
    }
    (loss / n, gw / n, gb / n)
}

/// Weight and bias as named parameters so the shared optimizer can drive them.
#[derive(Clone, Debug)]
struct Logistic {
    w: Param,
    b: Param,
}

impl Parameterized for Logistic {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&crate::nn::join(prefix, "w"), &self.w);
        f(&crate::nn::join(prefix, "b"), &self.b);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&crate::nn::join(prefix, "w"), &mut self.w);
        f(&crate::nn::join(prefix, "b"), &mut self.b);
    }
}

fn stats(r: &[f64]) -> (f64, f64) {
    let n = r.len().max(1) as f64;
    let m = r.iter().sum::<f64>() / n;
    let var = r.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    let sd = var.sqrt();
    (m, if sd > 0.0 && sd.is_finite() { sd } else { 1.0 })
}

/// Fits the detector on per-flow losses `r` by mini-batch Adam. Inputs are
/// standardized for conditioning and the result is folded back to raw `r`.
/// Logged `p_loss` is the batch BCE; `r_loss` the batch mean of `r`.
pub fn fit_detector(
    r: &[f64],
    malicious: &[bool],
    steps: usize,
    hyper: &OptimHyper,
    batch_size: usize,
    log_interval: usize,
    rng: &RngStream,
) -> Result<(LbdDetector, Vec<TrainLogRow>)> {
    if r.len() != malicious.len() {
        return Err(Error::Argument(format!(
            "{} losses for {} labels",
            r.len(),
            malicious.len()
        )));
    }
    if r.is_empty() {
        return Err(Error::Data("stage-2 set is empty".into()));
    }
    if let Some(i) = r.iter().position(|v| !v.is_finite()) {
        return Err(Error::Diverged {
            step: 0,
            what: format!("reconstruction loss of flow {i}"),
        });
    }
    hyper.validate()?;
    let (m, sd) = stats(r);
    let schema = FeatureSchema::new(vec!["r".into()], vec!["Benign".into(), "Malicious".into()])?;
    let s: Vec<f64> = r.iter().map(|v| (v - m) / sd).collect();
    let labels: Vec<usize> = malicious.iter().map(|&y| usize::from(y)).collect();
    let n = r.len();
    let ds = Dataset::new(schema, vec![s], labels, vec![None; n], vec![None; n])?;

    let mut lr = Logistic {
        w: Param::new(Tensor::zeros(&[1]), ParamKind::DenseWeight),
        b: Param::new(Tensor::zeros(&[1]), ParamKind::Bias),
    };
    let mut state = AdamState::new();
    let mut stream = batches(&ds, batch_size, rng)?;
    let mut log = Vec::new();
    for step in 1..=steps {
        let batch = stream.next().expect("endless stream");
        let xs = batch.x.data();
        let ys: Vec<bool> = batch.labels.iter().map(|&l| l == 1).collect();
        let (loss, gw, gb) = bce(lr.w.value.data()[0], lr.b.value.data()[0], xs, &ys);
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step,
                what: "stage-2 loss".into(),
            });
        }
        lr.w.grad.data_mut()[0] = gw;
        lr.b.grad.data_mut()[0] = gb;
        let g = GradStore::collect(&lr);
        adam_step(&mut lr, &g, &mut state, hyper)?;
        if step % log_interval == 0 {
            let raw_mean = xs.iter().map(|v| v * sd + m).sum::<f64>() / xs.len() as f64;
            let acc = xs
                .iter()
                .zip(&ys)
                .filter(|(&x, &y)| {
                    (sigmoid(lr.w.value.data()[0] * x + lr.b.value.data()[0]) >= 0.5) == y
                })
                .count() as f64
                / xs.len() as f64;
            log.push(TrainLogRow {
                step,
                split: Split::Train,
                accuracy: Some(acc),
                p_loss: Some(loss),
                kl_loss: None,
                r_loss: Some(raw_mean),
                total_loss: loss,
            });
        }
    }
    let (a, c) = (lr.w.value.data()[0], lr.b.value.data()[0]);
    Ok((
        LbdDetector {
            w: a / sd,
            b: c - a * m / sd,
        },
        log,
    ))
}

/// Stage 1: VAE trained on benign flows only with `r + KLM·kl`.
/// `benign` must already be preprocessed.
pub fn lbd_stage1_train(
    benign: &Dataset,
    preset: &Preset,
    opts: &TrainOptions,
    rng: &RngStream,
) -> Result<(VaeModel, Vec<TrainLogRow>)> {
    preset.validate()?;
    opts.validate()?;
    let bad: Vec<usize> = (0..benign.len())
        .filter(|&i| !benign.is_benign(i))
        .collect();
    if !bad.is_empty() {
        return Err(Error::Contamination {
            count: bad.len(),
            first_rows: bad.into_iter().take(10).collect(),
        });
    }
    let arch = preset.architecture(benign.width(), opts.channels);
    if benign.is_empty() || (arch.batch_norm && benign.len() < 2) {
        return Err(Error::Data(
            "stage-1 set needs at least 2 benign flows".into(),
        ));
    }
    let mut vae = VaeModel::new(arch, &mut rng.fork(1))?;
    let obj = Objective {
        p: false,
        r: true,
        kl: preset.losses.kl.then(|| preset.kl_weight()),
    };
    let hyper = OptimHyper {
        weight_decay: opts.weight_decay,
        ..OptimHyper::with_lr(opts.learning_rate.unwrap_or(preset.learning_rate))
    };
    hyper.validate()?;
    let mut adam = AdamState::new();
    let mut noise = rng.fork(4);
    let mut stream = batches(benign, opts.batch_size, &rng.fork(3))?;
    let mut log = Vec::new();
    for step in 1..=opts.steps.unwrap_or(preset.steps) {
        let mut batch = stream.next().expect("endless stream");
        while vae.arch.batch_norm && batch.labels.len() < 2 {
            batch = stream.next().expect("endless stream");
        }
        vae.zero_grad();
        let eps = noise.normal_tensor(&[batch.labels.len(), vae.latent_dim()]);
        let mut m = forward_backward(&mut vae, None, &batch.x, &batch.labels, eps, obj, true)?;
        m.total += apply_l2(&mut vae, hyper.weight_decay);
        if !m.total.is_finite() {
            return Err(Error::Diverged {
                step,
                what: "stage-1 loss".into(),
            });
        }
        let g = GradStore::collect(&vae);
        adam_step(&mut vae, &g, &mut adam, &hyper)?;
        if step % opts.log_interval == 0 {
            log.push(log_row(step, Split::Train, &m));
            log::info!("stage 1 step {step}: total {:.6}", m.total);
        }
    }
    Ok((vae, log))
}

/// Checksum over parameters and batch-norm running statistics.
pub fn state_checksum(vae: &VaeModel) -> u64 {
    let mut h = vae.checksum();
    let mut fold = |t: &[f64]| {
        for v in t {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
    };
    for seq in std::iter::once(&vae.encoder).chain(vae.decoder.as_ref()) {
        for l in &seq.layers {
            if let crate::nn::Layer::BatchNorm(bn) = l {
                fold(&bn.running_mean);
                fold(&bn.running_var);
            }
        }
    }
    h
}

/// Stage 2: logistic detector on per-flow reconstruction losses from the
/// frozen VAE. `mixed` must already be preprocessed and binary or multiclass
/// with the benign class at its schema's benign index.
pub fn lbd_stage2_train(
    mixed: &Dataset,
    vae: &VaeModel,
    preset: &Preset,
    opts: &TrainOptions,
    rng: &RngStream,
) -> Result<(LbdDetector, Vec<TrainLogRow>)> {
    opts.validate()?;
    let before = state_checksum(vae);
    let r = vae.rloss_per_flow(&mixed.to_tensor()?)?;
    let malicious: Vec<bool> = (0..mixed.len()).map(|i| !mixed.is_benign(i)).collect();
    let hyper = OptimHyper::with_lr(opts.stage2_learning_rate.unwrap_or(preset.learning_rate));
    let steps = opts.steps2.or(preset.steps2).unwrap_or(0);
    let out = fit_detector(
        &r,
        &malicious,
        steps,
        &hyper,
        opts.batch_size,
        opts.log_interval,
        &rng.fork(5),
    )?;
    let after = state_checksum(vae);
    if before != after {
        return Err(Error::IsolationViolation { before, after });
    }
    Ok(out)
}

/// Verdict and malicious score per row of preprocessed `x`.
pub fn lbd_classify(det: &LbdDetector, vae: &VaeModel, x: &Tensor) -> Result<Vec<(Verdict, f64)>> {
    Ok(vae
        .rloss_per_flow(x)?
        .into_iter()
        .map(|r| det.decide(r))
        .collect())
}

/// Outcome of the full two-stage pipeline.
#[derive(Clone, Debug)]
pub struct LbdRun {
    pub model: TrainedModel,
    pub stage1_log: Vec<TrainLogRow>,
    pub stage2_log: Vec<TrainLogRow>,
}

/// Preprocessing is fitted on `train`. Stage 1 uses `stage1` when given,
/// else the benign flows of `train`; stage 2 uses all of `train`.
pub fn train_lbd(
    train: &Dataset,
    stage1: Option<&Dataset>,
    preset: &Preset,
    opts: &TrainOptions,
    rng: &RngStream,
) -> Result<LbdRun> {
    if preset.family != Family::Lbd {
        return Err(Error::Argument(format!(
            "preset {} is not a two-stage preset",
            preset.name
        )));
    }
    let train = train.to_binary();
    let prep = match &opts.preprocessor {
        Some(p) => p.clone(),
        None => fit_preprocessor(&train, preset, None)?,
    };
    let scaled = prep.apply(&train)?;
    let s1 = match stage1 {
        Some(d) => prep.apply(&d.to_binary())?,
        None => {
            let idx: Vec<usize> = (0..scaled.len()).filter(|&i| scaled.is_benign(i)).collect();
            scaled.subset(&idx)
        }
    };
    let (vae, stage1_log) = lbd_stage1_train(&s1, preset, opts, &rng.fork(10))?;
    let (det, stage2_log) = lbd_stage2_train(&scaled, &vae, preset, opts, &rng.fork(20))?;
    Ok(LbdRun {
        model: TrainedModel {
            vae,
            head: Head::Lbd(det),
            preset: preset.name.clone(),
            prep,
            classes: train.schema().classes().to_vec(),
        },
        stage1_log,
        stage2_log,
    })
}

/// Stage-1 VAE objective (`r + KLM·kl`) at fixed noise, for gradient checks.
pub struct Stage1Objective {
    pub vae: VaeModel,
    pub x: Tensor,
    pub eps: Tensor,
    klm: f64,
}

impl Stage1Objective {
    pub fn new(vae: VaeModel, x: Tensor, eps: Tensor, klm: f64) -> Self {
        Self { vae, x, eps, klm }
    }

    fn run(&mut self, backward: bool) -> Result<f64> {
        let obj = Objective {
            p: false,
            r: true,
            kl: Some(self.klm),
        };
        let labels = vec![0; self.x.rows()];
        Ok(forward_backward(
            &mut self.vae,
            None,
            &self.x,
            &labels,
            self.eps.clone(),
            obj,
            backward,
        )?
        .total)
    }
}

impl GradCheckable for Stage1Objective {
    fn evaluate(&mut self) -> Result<Evaluation> {
        let loss = self.run(false)?;
        Ok(Evaluation {
            loss,
            kink_signature: self.vae.relu_signature(),
        })
    }

    fn gradients(&mut self) -> Result<GradStore> {
        self.vae.zero_grad();
        self.run(true)?;
        Ok(GradStore::collect(&self.vae))
    }

    fn visit_values_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.vae
            .visit_params_mut("", &mut |n, p| f(n, &mut p.value));
    }
}

/// Stage-2 binary cross-entropy in `(w, b)` over fixed losses, for gradient checks.
pub struct LbdObjective {
    pub w: Tensor,
    pub b: Tensor,
    pub r: Vec<f64>,
    pub malicious: Vec<bool>,
}

impl LbdObjective {
    pub fn new(det: LbdDetector, r: Vec<f64>, malicious: Vec<bool>) -> Self {
        Self {
            w: Tensor::filled(&[1], det.w),
            b: Tensor::filled(&[1], det.b),
            r,
            malicious,
        }
    }
}

impl GradCheckable for LbdObjective {
    fn evaluate(&mut self) -> Result<Evaluation> {
        let (loss, _, _) = bce(self.w.data()[0], self.b.data()[0], &self.r, &self.malicious);
        Ok(Evaluation {
            loss,
            kink_signature: 0,
        })
    }

    fn gradients(&mut self) -> Result<GradStore> {
        let (_, gw, gb) = bce(self.w.data()[0], self.b.data()[0], &self.r, &self.malicious);
        let mut g = GradStore::new();
        g.insert("w", Tensor::filled(&[1], gw));
        g.insert("b", Tensor::filled(&[1], gb));
        Ok(g)
    }

    fn visit_values_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("w", &mut self.w);
        f("b", &mut self.b);
    }
}

/// Mean stage-1 objective over a preprocessed split through `μ`.
pub fn stage1_eval(
    vae: &VaeModel,
    x: &Tensor,
    preset: &Preset,
    chunk: usize,
) -> Result<TrainLogRow> {
    let obj = Objective {
        p: false,
        r: true,
        kl: preset.losses.kl.then(|| preset.kl_weight()),
    };
    let labels = vec![0; x.rows()];
    let m = sweep(vae, None, x, &labels, obj, chunk.max(1))?;
    Ok(log_row(0, Split::Val, &m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_synthetic, SyntheticSpec};
    use crate::preset::preset;

    fn hyper() -> OptimHyper {
        OptimHyper::with_lr(0.05)
    }

    #[test]
    fn neutral_detector() {
        let d = LbdDetector::default();
        assert_eq!(d.decide(123.0), (Verdict::Malicious, 0.5));
    }

    #[test]
    fn monotone_in_r() {
        let d = LbdDetector { w: 2.0, b: -3.0 };
        let mut prev = Verdict::Benign;
        for i in 0..100 {
            let (v, _) = d.decide(i as f64 * 0.05);
            assert!(!(prev == Verdict::Malicious && v == Verdict::Benign));
            prev = v;
        }
    }

    #[test]
    fn bce_gradient_matches_finite_difference() {
        let r = [0.3, 1.5, -0.2, 4.0];
        let y = [false, true, false, true];
        let (_, gw, gb) = bce(0.7, -0.4, &r, &y);
        let h = 1e-6;
        let nw = (bce(0.7 + h, -0.4, &r, &y).0 - bce(0.7 - h, -0.4, &r, &y).0) / (2.0 * h);
        let nb = (bce(0.7, -0.4 + h, &r, &y).0 - bce(0.7, -0.4 - h, &r, &y).0) / (2.0 * h);
        assert!((gw - nw).abs() < 1e-8 && (gb - nb).abs() < 1e-8);
    }

    fn separated(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
        let mut rng = RngStream::new(seed);
        let mut r = Vec::new();
        let mut y = Vec::new();
        for i in 0..n {
            let mal = i % 2 == 1;
            r.push(if mal { 9.0 } else { 0.0 } + rng.uniform());
            y.push(mal);
        }
        (r, y)
    }

    #[test]
    fn separated_losses_are_learned() {
        let (r, y) = separated(1000, 1);
        let (d, log) = fit_detector(&r, &y, 500, &hyper(), 128, 50, &RngStream::new(2)).unwrap();
        let acc = r
            .iter()
            .zip(&y)
            .filter(|(&ri, &yi)| (d.decide(ri).0 == Verdict::Malicious) == yi)
            .count();
        assert!(acc as f64 / 1000.0 >= 0.99);
        assert!(d.w > 0.0);
        assert_eq!(log.len(), 10);
    }

    #[test]
    fn indistinguishable_losses_give_chance() {
        let mut rng = RngStream::new(3);
        let r: Vec<f64> = (0..4000).map(|_| rng.uniform()).collect();
        let y: Vec<bool> = (0..4000).map(|i| i % 2 == 0).collect();
        let (d, _) = fit_detector(&r, &y, 300, &hyper(), 256, 50, &RngStream::new(4)).unwrap();
        let acc = r
            .iter()
            .zip(&y)
            .filter(|(&ri, &yi)| (d.decide(ri).0 == Verdict::Malicious) == yi)
            .count() as f64
            / 4000.0;
        assert!((acc - 0.5).abs() <= 0.05, "{acc}");
    }

    #[test]
    fn contamination_rejected() {
        let mut spec =
            SyntheticSpec::two_cluster(vec!["a".into(), "b".into()], 20, 3.0, 1).unwrap();
        spec.seed = 2;
        let d = gen_synthetic(&spec).unwrap();
        let p = preset("lbd3").unwrap();
        match lbd_stage1_train(&d, &p, &TrainOptions::default(), &RngStream::new(1)) {
            Err(Error::Contamination { count, first_rows }) => {
                assert_eq!(count, 20);
                assert_eq!(first_rows.len(), 10);
            }
            other => panic!("expected contamination, got {:?}", other.map(|_| ())),
        }
    }
}
