use super::{
    fit_preprocessor, forward_backward, log_row, softmax_rows, sweep, Head, Objective,
    TrainOptions, TrainedModel,
};
use crate::data::{batches, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{Split, TrainLogRow};
use crate::nn::{
    Activation, DenseLayer, Evaluation, GradCheckable, GradStore, Module, Param, Parameterized,
};
use crate::optim::{adam_step, apply_l2, AdamState, OptimHyper};
use crate::preset::{Classification, Family, Preset};
use crate::rng::RngStream;
use crate::tensor::Tensor;
use crate::vae::VaeModel;

/// Linear layer from the latent code to class logits.
#[derive(Clone, Debug)]
pub struct LlcHead {
    pub dense: DenseLayer,
}

impl LlcHead {
    pub fn new(latent: usize, classes: usize, rng: &mut RngStream) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Argument(
                "a classifier head needs at least 2 classes".into(),
            ));
        }
        Ok(Self {
            dense: DenseLayer::new(latent, classes, Activation::Linear, rng),
        })
    }

    pub fn classes(&self) -> usize {
        self.dense.outputs()
    }

    pub fn logits(&self, z: &Tensor) -> Result<Tensor> {
        self.dense.infer(z)
    }
}

impl Parameterized for LlcHead {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.dense.visit_params(prefix, f)
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.dense.visit_params_mut(prefix, f)
    }
}

/// Class index and probability vector for each row of preprocessed `x`,
/// classifying `μ` directly.
pub fn llc_predict(vae: &VaeModel, head: &LlcHead, x: &Tensor) -> Result<Vec<(usize, Vec<f64>)>> {
    let (mu, _) = vae.encode(x)?;
    let probs = softmax_rows(&head.logits(&mu)?);
    Ok((0..probs.rows())
        .map(|r| (super::argmax(probs.row(r)), probs.row(r).to_vec()))
        .collect())
}

fn ensure_trainable(ds: &Dataset, batch_norm: bool, what: &str) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::Data(format!("{what} set is empty")));
    }
    if batch_norm && ds.len() < 2 {
        return Err(Error::Data(format!(
            "{what} set needs at least 2 rows for batch norm"
        )));
    }
    Ok(())
}

pub(crate) fn for_preset(ds: &Dataset, preset: &Preset) -> Dataset {
    if preset.classification == Classification::Binary && !ds.schema().is_binary() {
        ds.to_binary()
    } else {
        ds.clone()
    }
}

/// Joint training of VAE and latent classifier for a fixed number of steps.
///
/// Every `log_interval` steps a `train` row (metrics of the current batch)
/// and, when `val` is non-empty, a `val` row (full sweep through `μ`) are
/// logged.
pub fn train_llc(
    train: &Dataset,
    val: &Dataset,
    preset: &Preset,
    opts: &TrainOptions,
    rng: &RngStream,
) -> Result<(TrainedModel, Vec<TrainLogRow>)> {
    preset.validate()?;
    opts.validate()?;
    if preset.family != Family::Llc {
        return Err(Error::Argument(format!(
            "preset {} is not a classifier preset",
            preset.name
        )));
    }
    let train = for_preset(train, preset);
    let val = for_preset(val, preset);
    let prep = match &opts.preprocessor {
        Some(p) => p.clone(),
        None => fit_preprocessor(&train, preset, None)?,
    };
    let train = prep.apply(&train)?;
    let val = if val.is_empty() {
        val
    } else {
        prep.apply(&val)?
    };
    let arch = preset.architecture(prep.width(), opts.channels);
    ensure_trainable(&train, arch.batch_norm, "training")?;

    let classes = train.schema().classes().to_vec();
    let mut vae = VaeModel::new(arch, &mut rng.fork(1))?;
    let mut head = LlcHead::new(vae.latent_dim(), classes.len(), &mut rng.fork(2))?;
    let mut noise = rng.fork(4);
    let obj = Objective::from_preset(preset);
    let hyper = OptimHyper {
        weight_decay: opts.weight_decay,
        ..OptimHyper::with_lr(opts.learning_rate.unwrap_or(preset.learning_rate))
    };
    hyper.validate()?;
    let (mut adam_vae, mut adam_head) = (AdamState::new(), AdamState::new());
    let val_x = if val.is_empty() {
        None
    } else {
        Some(val.to_tensor()?)
    };

    let steps = opts.steps.unwrap_or(preset.steps);
    let mut stream = batches(&train, opts.batch_size, &rng.fork(3))?;
    let mut log = Vec::new();
    for step in 1..=steps {
        let mut batch = stream.next().expect("endless stream");
        while vae.arch.batch_norm && batch.labels.len() < 2 {
            batch = stream.next().expect("endless stream");
        }
        vae.zero_grad();
        head.zero_grad();
        let eps = noise.normal_tensor(&[batch.labels.len(), vae.latent_dim()]);
        let mut m = forward_backward(
            &mut vae,
            Some(&mut head),
            &batch.x,
            &batch.labels,
            eps,
            obj,
            true,
        )?;
        m.total += apply_l2(&mut vae, hyper.weight_decay);
        if !m.total.is_finite() {
            return Err(Error::Diverged {
                step,
                what: "total loss".into(),
            });
        }
        let g = GradStore::collect(&vae);
        adam_step(&mut vae, &g, &mut adam_vae, &hyper)?;
        let g = GradStore::collect(&head);
        adam_step(&mut head, &g, &mut adam_head, &hyper)?;
        if step % opts.log_interval == 0 {
            log.push(log_row(step, Split::Train, &m));
            if let Some(vx) = &val_x {
                let vm = sweep(&vae, Some(&head), vx, val.labels(), obj, opts.batch_size)?;
                log.push(log_row(step, Split::Val, &vm));
            }
            log::info!("step {step}: train total {:.6}", m.total);
        }
    }
    let model = TrainedModel {
        vae,
        head: Head::Llc(head),
        preset: preset.name.clone(),
        prep,
        classes,
    };
    Ok((model, log))
}

/// Joint objective at fixed noise, for gradient checking. Parameter names are
/// prefixed `vae.` and `head.`.
pub struct LlcObjective {
    pub vae: VaeModel,
    pub head: LlcHead,
    pub x: Tensor,
    pub labels: Vec<usize>,
    pub eps: Tensor,
    obj: Objective,
}

impl LlcObjective {
    pub fn new(
        vae: VaeModel,
        head: LlcHead,
        x: Tensor,
        labels: Vec<usize>,
        eps: Tensor,
        preset: &Preset,
    ) -> Self {
        Self {
            vae,
            head,
            x,
            labels,
            eps,
            obj: Objective::from_preset(preset),
        }
    }

    /// Overrides the loss terms.
    pub fn with_terms(mut self, p: bool, r: bool, klm: Option<f64>) -> Self {
        self.obj = Objective { p, r, kl: klm };
        self
    }

    fn run(&mut self, backward: bool) -> Result<f64> {
        let m = forward_backward(
            &mut self.vae,
            Some(&mut self.head),
            &self.x,
            &self.labels,
            self.eps.clone(),
            self.obj,
            backward,
        )?;
        Ok(m.total)
    }

    /// Accumulated gradients after one backward pass (used to verify the
    /// decoder receives none when R is off).
    pub fn gradient_store(&mut self) -> Result<GradStore> {
        self.gradients()
    }
}

impl GradCheckable for LlcObjective {
    fn evaluate(&mut self) -> Result<Evaluation> {
        let loss = self.run(false)?;
        Ok(Evaluation {
            loss,
            kink_signature: self.vae.relu_signature(),
        })
    }

    fn gradients(&mut self) -> Result<GradStore> {
        self.vae.zero_grad();
        self.head.zero_grad();
        self.run(true)?;
        let mut g = GradStore::new();
        self.vae
            .visit_params("vae", &mut |n, p| g.insert(n, p.grad.clone()));
        self.head
            .visit_params("head", &mut |n, p| g.insert(n, p.grad.clone()));
        Ok(g)
    }

    fn visit_values_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.vae
            .visit_params_mut("vae", &mut |n, p| f(n, &mut p.value));
        self.head
            .visit_params_mut("head", &mut |n, p| f(n, &mut p.value));
    }
}
