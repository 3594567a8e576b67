//! Variational autoencoder: encoder stack, mean / log-variance heads,
//! reparameterized sampling and a mirrored decoder.

use crate::error::{dim_err, Error, Result};
use crate::nn::{
    conv1d_output_len, join, Activation, BatchNorm1D, Conv1DLayer, DenseLayer, Layer, Mode, Module,
    Padding, Param, Parameterized, Sequential, TransposedConv1DLayer,
};
use crate::rng::RngStream;
use crate::tensor::Tensor;

pub const DEFAULT_CHANNELS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerType {
    Conv,
    Dense,
}

impl LayerType {
    pub fn name(self) -> &'static str {
        match self {
            LayerType::Conv => "conv",
            LayerType::Dense => "dense",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "conv" | "conv1d" => Some(LayerType::Conv),
            "dense" => Some(LayerType::Dense),
            _ => None,
        }
    }
}

/// Geometry of one VAE. Dense variants use the conv shape chain as layer widths.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub input_width: usize,
    pub layer_type: LayerType,
    pub kernels: Vec<usize>,
    pub strides: Vec<usize>,
    pub channels: usize,
    pub batch_norm: bool,
}

impl Architecture {
    /// Widths from the input through every encoder layer; the last entry is
    /// the latent size.
    pub fn shape_chain(&self) -> Result<Vec<usize>> {
        if self.kernels.len() != self.strides.len() || self.kernels.is_empty() {
            return Err(Error::Argument(format!(
                "need matching non-empty kernel and stride plans, got {:?} / {:?}",
                self.kernels, self.strides
            )));
        }
        let mut chain = vec![self.input_width];
        for (&k, &s) in self.kernels.iter().zip(&self.strides) {
            let prev = *chain.last().unwrap();
            chain.push(conv1d_output_len(prev, k, s, Padding::for_stride(s))?);
        }
        Ok(chain)
    }

    pub fn latent_dim(&self) -> Result<usize> {
        Ok(*self.shape_chain()?.last().unwrap())
    }

    fn validate(&self) -> Result<()> {
        if self.input_width == 0 {
            return Err(Error::Argument("input width must be ≥ 1".into()));
        }
        if self.layer_type == LayerType::Conv && self.channels == 0 {
            return Err(Error::Argument(
                "conv architecture needs ≥ 1 channel".into(),
            ));
        }
        self.shape_chain().map(|_| ())
    }
}

#[derive(Clone, Debug)]
pub struct LatentSample {
    pub mu: Tensor,
    pub logvar: Tensor,
    pub eps: Tensor,
    pub z: Tensor,
}

#[derive(Clone, Debug)]
pub struct VaeOutput {
    pub sample: LatentSample,
    pub x_hat: Tensor,
    pub kl: f64,
    pub rloss: f64,
}

#[derive(Clone, Debug)]
pub struct VaeModel {
    pub arch: Architecture,
    pub encoder: Sequential,
    pub mu: DenseLayer,
    pub logvar: DenseLayer,
    /// `None` once detached for encoder-only inference.
    pub decoder: Option<Sequential>,
}

impl VaeModel {
    pub fn new(arch: Architecture, rng: &mut RngStream) -> Result<Self> {
        arch.validate()?;
        let chain = arch.shape_chain()?;
        let j = *chain.last().unwrap();
        let depth = arch.kernels.len();
        let mut enc = Vec::new();
        let mut dec = Vec::new();
        let enc_out;
        match arch.layer_type {
            LayerType::Conv => {
                let c = arch.channels;
                for i in 0..depth {
                    let (k, s) = (arch.kernels[i], arch.strides[i]);
                    let c_in = if i == 0 { 1 } else { c };
                    enc.push(Layer::Conv(Conv1DLayer::new(
                        k,
                        c_in,
                        c,
                        s,
                        Padding::for_stride(s),
                        Activation::Relu,
                        rng,
                    )?));
                    if arch.batch_norm {
                        enc.push(Layer::BatchNorm(BatchNorm1D::new(c)));
                    }
                }
                enc_out = j * c;
                for i in (0..depth).rev() {
                    let (k, s) = (arch.kernels[i], arch.strides[i]);
                    let c_in = if i == depth - 1 { 1 } else { c };
                    let last = i == 0;
                    let (c_out, act) = if last {
                        (1, Activation::Linear)
                    } else {
                        (c, Activation::Relu)
                    };
                    dec.push(Layer::TransposedConv(TransposedConv1DLayer::new(
                        k,
                        c_in,
                        c_out,
                        s,
                        Padding::for_stride(s),
                        chain[i],
                        act,
                        rng,
                    )?));
                    if !last && arch.batch_norm {
                        dec.push(Layer::BatchNorm(BatchNorm1D::new(c)));
                    }
                }
            }
            LayerType::Dense => {
                for i in 0..depth {
                    enc.push(Layer::Dense(DenseLayer::new(
                        chain[i],
                        chain[i + 1],
                        Activation::Relu,
                        rng,
                    )));
                    if arch.batch_norm {
                        enc.push(Layer::BatchNorm(BatchNorm1D::new(chain[i + 1])));
                    }
                }
                enc_out = j;
                for i in (0..depth).rev() {
                    let last = i == 0;
                    let act = if last {
                        Activation::Linear
                    } else {
                        Activation::Relu
                    };
                    dec.push(Layer::Dense(DenseLayer::new(
                        chain[i + 1],
                        chain[i],
                        act,
                        rng,
                    )));
                    if !last && arch.batch_norm {
                        dec.push(Layer::BatchNorm(BatchNorm1D::new(chain[i])));
                    }
                }
            }
        }
        let mu = DenseLayer::new(enc_out, j, Activation::Linear, rng);
        let logvar = DenseLayer::new(enc_out, j, Activation::Linear, rng);
        Ok(Self {
            arch,
            encoder: Sequential::new(enc),
            mu,
            logvar,
            decoder: Some(Sequential::new(dec)),
        })
    }

    pub fn input_width(&self) -> usize {
        self.arch.input_width
    }

    pub fn latent_dim(&self) -> usize {
        self.mu.outputs()
    }

    pub fn detach_decoder(&mut self) -> Option<Sequential> {
        self.decoder.take()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.row_len() != self.input_width() {
            return dim_err(format!(
                "model expects [B × {}] input, got {:?}",
                self.input_width(),
                x.shape()
            ));
        }
        Ok(())
    }

    fn check_latent(&self, z: &Tensor) -> Result<()> {
        if z.shape().len() != 2 || z.row_len() != self.latent_dim() {
            return dim_err(format!(
                "decoder expects [B × {}] latent, got {:?}",
                self.latent_dim(),
                z.shape()
            ));
        }
        Ok(())
    }

    fn encoder_input(&self, x: &Tensor) -> Result<Tensor> {
        match self.arch.layer_type {
            LayerType::Conv => x.clone().reshape(vec![x.rows(), self.input_width(), 1]),
            LayerType::Dense => Ok(x.clone()),
        }
    }

    fn decoder_input(&self, z: &Tensor) -> Result<Tensor> {
        match self.arch.layer_type {
            LayerType::Conv => z.clone().reshape(vec![z.rows(), self.latent_dim(), 1]),
            LayerType::Dense => Ok(z.clone()),
        }
    }

    fn decoder_ref(&self) -> Result<&Sequential> {
        self.decoder
            .as_ref()
            .ok_or_else(|| Error::State("decoder has been detached".into()))
    }

    /// Pure encoder pass with batch-norm running statistics.
    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        self.check_input(x)?;
        let h = self.encoder.infer(&self.encoder_input(x)?)?;
        Ok((self.mu.infer(&h)?, self.logvar.infer(&h)?))
    }

    /// Pure decoder pass.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.check_latent(z)?;
        let dec = self.decoder_ref()?;
        let y = dec.infer(&self.decoder_input(z)?)?;
        y.reshape(vec![z.rows(), self.input_width()])
    }

    /// Caching encoder pass for training.
    pub fn encode_forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, Tensor)> {
        self.check_input(x)?;
        let inp = self.encoder_input(x)?;
        let h = self.encoder.forward(&inp, mode)?;
        Ok((self.mu.forward(&h, mode)?, self.logvar.forward(&h, mode)?))
    }

    /// Caching decoder pass for training.
    pub fn decode_forward(&mut self, z: &Tensor, mode: Mode) -> Result<Tensor> {
        self.check_latent(z)?;
        let inp = self.decoder_input(z)?;
        let (b, n) = (z.rows(), self.input_width());
        let dec = self
            .decoder
            .as_mut()
            .ok_or_else(|| Error::State("decoder has been detached".into()))?;
        dec.forward(&inp, mode)?.reshape(vec![b, n])
    }

    /// Back-propagates `(dμ, dlogvar)` through the encoder; returns `dx`.
    pub fn encoder_backward(&mut self, d_mu: &Tensor, d_logvar: &Tensor) -> Result<Tensor> {
        let mut dh = self.mu.backward(d_mu)?;
        dh.add_assign(&self.logvar.backward(d_logvar)?)?;
        let dx = self.encoder.backward(&dh)?;
        let rows = dx.rows();
        dx.reshape(vec![rows, self.input_width()])
    }

    /// Back-propagates `dx̂` through the decoder; returns `dz`.
    pub fn decoder_backward(&mut self, d_xhat: &Tensor) -> Result<Tensor> {
        let (b, j) = (d_xhat.rows(), self.latent_dim());
        let g = match self.arch.layer_type {
            LayerType::Conv => d_xhat.clone().reshape(vec![b, self.input_width(), 1])?,
            LayerType::Dense => d_xhat.clone(),
        };
        let dec = self
            .decoder
            .as_mut()
            .ok_or_else(|| Error::State("decoder has been detached".into()))?;
        dec.backward(&g)?.reshape(vec![b, j])
    }

    /// Parameters of the encoder and latent heads only.
    pub fn visit_encoder_params(&self, f: &mut dyn FnMut(&str, &Param)) {
        self.encoder.visit_params("encoder", f);
        self.mu.visit_params("mu", f);
        self.logvar.visit_params("logvar", f);
    }

    pub fn relu_signature(&self) -> u64 {
        let mut acc = 0u64;
        self.encoder.relu_signature(&mut acc);
        if let Some(d) = &self.decoder {
            d.relu_signature(&mut acc);
        }
        acc
    }

    /// Per-flow reconstruction loss through `μ` (no sampling noise).
    pub fn rloss_per_flow(&self, x: &Tensor) -> Result<Vec<f64>> {
        let (mu, _) = self.encode(x)?;
        let x_hat = self.decode(&mu)?;
        reconstruction_loss_per_row(x, &x_hat)
    }
}

impl Parameterized for VaeModel {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.encoder.visit_params(&join(prefix, "encoder"), f);
        self.mu.visit_params(&join(prefix, "mu"), f);
        self.logvar.visit_params(&join(prefix, "logvar"), f);
        if let Some(d) = &self.decoder {
            d.visit_params(&join(prefix, "decoder"), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.encoder.visit_params_mut(&join(prefix, "encoder"), f);
        self.mu.visit_params_mut(&join(prefix, "mu"), f);
        self.logvar.visit_params_mut(&join(prefix, "logvar"), f);
        if let Some(d) = &mut self.decoder {
            d.visit_params_mut(&join(prefix, "decoder"), f);
        }
    }
}

fn check_pair(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return dim_err(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        ));
    }
    Ok(())
}

/// `z = μ + exp(logvar / 2) · ε` with `ε ~ N(0, 1)`.
pub fn sample_latent(mu: &Tensor, logvar: &Tensor, rng: &mut RngStream) -> Result<LatentSample> {
    let eps = rng.normal_tensor(mu.shape());
    sample_latent_with(mu, logvar, eps)
}

/// Reparameterization with a caller-supplied `ε`.
pub fn sample_latent_with(mu: &Tensor, logvar: &Tensor, eps: Tensor) -> Result<LatentSample> {
    check_pair(mu, logvar, "latent sample")?;
    check_pair(mu, &eps, "latent noise")?;
    let mut z = mu.clone();
    for ((zv, lv), e) in z.data_mut().iter_mut().zip(logvar.data()).zip(eps.data()) {
        *zv += (lv / 2.0).exp() * e;
    }
    Ok(LatentSample {
        mu: mu.clone(),
        logvar: logvar.clone(),
        eps,
        z,
    })
}

/// Batch mean of `−½ Σ (1 + logvar − μ² − exp(logvar))`.
pub fn kl_loss(mu: &Tensor, logvar: &Tensor) -> Result<f64> {
    check_pair(mu, logvar, "kl loss")?;
    let total: f64 = mu
        .data()
        .iter()
        .zip(logvar.data())
        .map(|(m, lv)| -0.5 * (1.0 + lv - m * m - lv.exp()))
        .sum();
    Ok(total / mu.rows() as f64)
}

/// Gradients of [`kl_loss`] with respect to `μ` and `logvar`.
pub fn kl_grad(mu: &Tensor, logvar: &Tensor) -> Result<(Tensor, Tensor)> {
    check_pair(mu, logvar, "kl gradient")?;
    let b = mu.rows() as f64;
    Ok((
        mu.map(|m| m / b),
        logvar.map(|lv| 0.5 * (lv.exp() - 1.0) / b),
    ))
}

/// Mean squared error per row.
pub fn reconstruction_loss_per_row(x: &Tensor, x_hat: &Tensor) -> Result<Vec<f64>> {
    check_pair(x, x_hat, "reconstruction loss")?;
    let n = x.row_len() as f64;
    Ok((0..x.rows())
        .map(|r| {
            x.row(r)
                .iter()
                .zip(x_hat.row(r))
                .map(|(a, b)| (b - a) * (b - a))
                .sum::<f64>()
                / n
        })
        .collect())
}

/// Batch mean of the per-row mean squared error.
pub fn reconstruction_loss(x: &Tensor, x_hat: &Tensor) -> Result<f64> {
    let rows = reconstruction_loss_per_row(x, x_hat)?;
    Ok(rows.iter().sum::<f64>() / rows.len() as f64)
}

/// Gradient of [`reconstruction_loss`] with respect to `x̂`.
pub fn reconstruction_grad(x: &Tensor, x_hat: &Tensor) -> Result<Tensor> {
    check_pair(x, x_hat, "reconstruction gradient")?;
    let scale = 2.0 / (x.len() as f64);
    x_hat.zip_map(x, |y, x| scale * (y - x))
}

/// Frozen-model pass: encode, sample, decode, and both losses.
pub fn vae_forward(x: &Tensor, model: &VaeModel, rng: &mut RngStream) -> Result<VaeOutput> {
    let (mu, logvar) = model.encode(x)?;
    let sample = sample_latent(&mu, &logvar, rng)?;
    let x_hat = model.decode(&sample.z)?;
    let kl = kl_loss(&mu, &logvar)?;
    let rloss = reconstruction_loss(x, &x_hat)?;
    Ok(VaeOutput {
        sample,
        x_hat,
        kl,
        rloss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn arch(n: usize, lt: LayerType, k: usize, strides: [usize; 3]) -> Architecture {
        Architecture {
            input_width: n,
            layer_type: lt,
            kernels: vec![k; 3],
            strides: strides.to_vec(),
            channels: 3,
            batch_norm: true,
        }
    }

    fn zero_all(m: &mut VaeModel) {
        m.visit_params_mut("", &mut |_, p| p.value.fill(0.0));
    }

    #[test]
    fn latent_sizes_for_reported_geometries() {
        assert_eq!(
            arch(76, LayerType::Conv, 5, [2, 1, 1])
                .latent_dim()
                .unwrap(),
            30
        );
        assert_eq!(
            arch(40, LayerType::Conv, 5, [1, 1, 1])
                .latent_dim()
                .unwrap(),
            28
        );
        assert_eq!(
            arch(40, LayerType::Conv, 7, [2, 2, 1])
                .latent_dim()
                .unwrap(),
            4
        );
    }

    #[test]
    fn zero_weights_give_zero_latent_and_reconstruction() {
        for lt in [LayerType::Conv, LayerType::Dense] {
            let mut m = VaeModel::new(arch(76, lt, 5, [2, 1, 1]), &mut RngStream::new(1)).unwrap();
            zero_all(&mut m);
            let x = Tensor::zeros(&[1, 76]);
            let (mu, lv) = m.encode(&x).unwrap();
            assert_eq!(mu.shape(), &[1, 30]);
            assert!(mu.data().iter().chain(lv.data()).all(|v| *v == 0.0));
            let out = vae_forward(&x, &m, &mut RngStream::new(2)).unwrap();
            assert_eq!(out.kl, 0.0);
            assert_eq!(out.rloss, 0.0);
            assert!(m
                .decode(&Tensor::filled(&[2, 30], 1.0))
                .unwrap()
                .data()
                .iter()
                .all(|v| *v == 0.0));
        }
    }

    #[test]
    fn decode_restores_width() {
        for (n, k, s) in [(76, 5, [2, 1, 1]), (40, 5, [1, 1, 1]), (40, 7, [2, 2, 1])] {
            for lt in [LayerType::Conv, LayerType::Dense] {
                let m = VaeModel::new(arch(n, lt, k, s), &mut RngStream::new(3)).unwrap();
                let x = RngStream::new(4).normal_tensor(&[3, n]);
                let out = vae_forward(&x, &m, &mut RngStream::new(5)).unwrap();
                assert_eq!(out.x_hat.shape(), &[3, n]);
            }
        }
    }

    #[test]
    fn conv_decoder_mirrors_chain() {
        let m = VaeModel::new(
            arch(76, LayerType::Conv, 5, [2, 1, 1]),
            &mut RngStream::new(1),
        )
        .unwrap();
        let targets: Vec<usize> = m
            .decoder
            .as_ref()
            .unwrap()
            .layers
            .iter()
            .filter_map(|l| match l {
                Layer::TransposedConv(t) => Some(t.target_len),
                _ => None,
            })
            .collect();
        assert_eq!(targets, vec![34, 38, 76]);
    }

    #[test]
    fn width_mismatch_is_dimension_error() {
        let m = VaeModel::new(
            arch(40, LayerType::Dense, 5, [1, 1, 1]),
            &mut RngStream::new(1),
        )
        .unwrap();
        assert!(matches!(
            m.encode(&Tensor::zeros(&[1, 39])),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            m.decode(&Tensor::zeros(&[1, 27])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn kl_closed_form_values() {
        let t = |v: f64| Tensor::new(vec![1, 1], vec![v]).unwrap();
        assert_eq!(kl_loss(&t(0.0), &t(0.0)).unwrap(), 0.0);
        assert!((kl_loss(&t(1.0), &t(0.0)).unwrap() - 0.5).abs() < 1e-12);
        let expect = 1.5 - 2f64.ln();
        assert!((kl_loss(&t(0.0), &t(4f64.ln())).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn reconstruction_values() {
        let t = |v: Vec<f64>| Tensor::new(vec![1, v.len()], v).unwrap();
        assert_eq!(
            reconstruction_loss(&t(vec![0.0, 0.0]), &t(vec![1.0, 1.0])).unwrap(),
            1.0
        );
        assert_eq!(
            reconstruction_loss(&t(vec![1.0, 2.0, 3.0]), &t(vec![1.0, 2.0, 6.0])).unwrap(),
            3.0
        );
        assert!(reconstruction_loss(&t(vec![1.0]), &t(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn reparameterization_cases() {
        let mu = Tensor::new(vec![1, 2], vec![0.5, -1.0]).unwrap();
        let lv = Tensor::new(vec![1, 2], vec![0.3, 0.0]).unwrap();
        let s = sample_latent_with(&mu, &lv, Tensor::zeros(&[1, 2])).unwrap();
        assert_eq!(s.z.data(), mu.data());
        let e = Tensor::new(vec![1, 2], vec![0.7, 0.7]).unwrap();
        let s = sample_latent_with(&mu, &Tensor::zeros(&[1, 2]), e).unwrap();
        assert_eq!(s.z.data(), &[0.5 + 0.7, -1.0 + 0.7]);
    }

    #[test]
    fn sampled_moments() {
        let n = 100_000;
        let s = sample_latent(
            &Tensor::zeros(&[n, 1]),
            &Tensor::zeros(&[n, 1]),
            &mut RngStream::new(11),
        )
        .unwrap();
        let mean = s.z.data().iter().sum::<f64>() / n as f64;
        let var = s.z.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02);
        assert!((var - 1.0).abs() < 0.02);
    }

    #[test]
    fn forward_is_deterministic() {
        let m = VaeModel::new(
            arch(40, LayerType::Conv, 5, [1, 1, 1]),
            &mut RngStream::new(9),
        )
        .unwrap();
        let x = RngStream::new(1).normal_tensor(&[4, 40]);
        let a = vae_forward(&x, &m, &mut RngStream::new(3)).unwrap();
        let b = vae_forward(&x, &m, &mut RngStream::new(3)).unwrap();
        assert_eq!(a.x_hat, b.x_hat);
        assert_eq!(a.kl.to_bits(), b.kl.to_bits());
    }

    #[test]
    fn detached_decoder_blocks_decode_only() {
        let mut m = VaeModel::new(
            arch(40, LayerType::Dense, 5, [1, 1, 1]),
            &mut RngStream::new(9),
        )
        .unwrap();
        let n_full = m.param_count();
        m.detach_decoder();
        assert!(m.param_count() < n_full);
        assert!(m.encode(&Tensor::zeros(&[1, 40])).is_ok());
        assert!(matches!(
            m.decode(&Tensor::zeros(&[1, 28])),
            Err(Error::State(_))
        ));
    }
}
