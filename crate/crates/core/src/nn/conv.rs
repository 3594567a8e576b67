//! 1-D convolution over the feature axis of a flow vector, and its mirror.
//!
//! Activations are laid out `[B × L × C]` (length-major, channels last). A
//! rank-2 input `[B × L]` is read as a single channel.

use super::{
    activation_backward, activation_forward, fold_mask, init_bound, join, no_cache, Activation,
    Mode, Module, Param, ParamKind, Parameterized,
};
use crate::error::{dim_err, Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Output length `ceil(L / stride)`, zero padding split as evenly as
    /// possible with the extra element on the right.
    Half,
    /// No padding, output length `floor((L - k) / stride) + 1`.
    Valid,
}

impl Padding {
    /// Half for strided layers, valid otherwise. This is the rule that
    /// produces the 76→38→34→30, 40→36→32→28 and 40→20→10→4 chains.
    pub fn for_stride(stride: usize) -> Self {
        if stride > 1 {
            Padding::Half
        } else {
            Padding::Valid
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Padding::Half => 0,
            Padding::Valid => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Padding::Half),
            1 => Some(Padding::Valid),
            _ => None,
        }
    }
}

pub fn conv1d_output_len(
    in_len: usize,
    k: usize,
    stride: usize,
    padding: Padding,
) -> Result<usize> {
    if in_len == 0 || k == 0 || stride == 0 {
        return Err(Error::Argument(format!(
            "conv1d_output_len needs positive arguments, got in_len={in_len} k={k} stride={stride}"
        )));
    }
    match padding {
        Padding::Half => Ok(in_len.div_ceil(stride)),
        Padding::Valid => {
            if in_len < k {
                return dim_err(format!(
                    "valid convolution of length {in_len} with kernel {k}"
                ));
            }
            Ok((in_len - k) / stride + 1)
        }
    }
}

/// Total zero padding implied by `padding` for an input of `in_len`.
fn total_pad(in_len: usize, k: usize, stride: usize, padding: Padding) -> usize {
    match padding {
        Padding::Valid => 0,
        Padding::Half => {
            let out = in_len.div_ceil(stride);
            ((out - 1) * stride + k).saturating_sub(in_len)
        }
    }
}

/// Left share of [`total_pad`]; the odd element goes right.
fn left_pad(in_len: usize, k: usize, stride: usize, padding: Padding) -> usize {
    total_pad(in_len, k, stride, padding) / 2
}

/// Effective receptive field of a conv stack: `1 + Σ (k_i − 1) · Π_{j<i} s_j`.
pub fn receptive_field(kernels: &[usize], strides: &[usize]) -> Result<usize> {
    if kernels.is_empty() || kernels.len() != strides.len() {
        return Err(Error::Argument(format!(
            "receptive_field needs equal non-empty lists, got {} kernels and {} strides",
            kernels.len(),
            strides.len()
        )));
    }
    if kernels.iter().chain(strides).any(|&v| v == 0) {
        return Err(Error::Argument(
            "kernel sizes and strides must be ≥ 1".into(),
        ));
    }
    let mut rf = 1;
    let mut jump = 1;
    for (&k, &s) in kernels.iter().zip(strides) {
        rf += (k - 1) * jump;
        jump *= s;
    }
    Ok(rf)
}

/// Splits an input into `(batch, length, channels)`, checking `channels`.
fn view3(x: &Tensor, channels: usize) -> Result<(usize, usize)> {
    match x.shape() {
        [b, l] if channels == 1 => Ok((*b, *l)),
        [b, l, c] if *c == channels => Ok((*b, *l)),
        s => dim_err(format!("expected [B × L × {channels}] input, got {s:?}")),
    }
}

/// Geometry shared by the convolution and its transpose. Indexing is in
/// terms of the "long" side (conv input / transposed-conv output) of length
/// `long_len` and the "short" side of length `short_len`: short position `i`,
/// tap `j` touches long position `i * stride + j - pad`.
#[derive(Clone, Copy, Debug)]
struct Geometry {
    k: usize,
    stride: usize,
    pad: usize,
    long_len: usize,
    short_len: usize,
}

impl Geometry {
    #[inline]
    fn tap(&self, i: usize, j: usize) -> Option<usize> {
        let t = (i * self.stride + j).checked_sub(self.pad)?;
        (t < self.long_len).then_some(t)
    }
}

/// short[b,i,co] += Σ_j Σ_ci long[b,tap(i,j),ci] · K[j,ci,co]
fn long_to_short(
    long: &[f64],
    kernel: &[f64],
    g: Geometry,
    batch: usize,
    c_long: usize,
    c_short: usize,
    short: &mut [f64],
) {
    for b in 0..batch {
        let lb = &long[b * g.long_len * c_long..(b + 1) * g.long_len * c_long];
        let sb = &mut short[b * g.short_len * c_short..(b + 1) * g.short_len * c_short];
        for i in 0..g.short_len {
            let out = &mut sb[i * c_short..(i + 1) * c_short];
            for j in 0..g.k {
                let Some(t) = g.tap(i, j) else { continue };
                let xin = &lb[t * c_long..(t + 1) * c_long];
                for (ci, &xv) in xin.iter().enumerate() {
                    let kr = &kernel[(j * c_long + ci) * c_short..(j * c_long + ci + 1) * c_short];
                    for (o, &kv) in out.iter_mut().zip(kr) {
                        *o += xv * kv;
                    }
                }
            }
        }
    }
}

/// long[b,tap(i,j),ci] += Σ_co short[b,i,co] · K[j,ci,co]
fn short_to_long(
    short: &[f64],
    kernel: &[f64],
    g: Geometry,
    batch: usize,
    c_long: usize,
    c_short: usize,
    long: &mut [f64],
) {
    for b in 0..batch {
        let sb = &short[b * g.short_len * c_short..(b + 1) * g.short_len * c_short];
        let lb = &mut long[b * g.long_len * c_long..(b + 1) * g.long_len * c_long];
        for i in 0..g.short_len {
            let sv = &sb[i * c_short..(i + 1) * c_short];
            for j in 0..g.k {
                let Some(t) = g.tap(i, j) else { continue };
                let xout = &mut lb[t * c_long..(t + 1) * c_long];
                for (ci, xo) in xout.iter_mut().enumerate() {
                    let kr = &kernel[(j * c_long + ci) * c_short..(j * c_long + ci + 1) * c_short];
                    *xo += sv.iter().zip(kr).map(|(a, b)| a * b).sum::<f64>();
                }
            }
        }
    }
}

/// dK[j,ci,co] += Σ_b Σ_i long[b,tap(i,j),ci] · short[b,i,co]
fn kernel_grad(
    long: &[f64],
    short: &[f64],
    g: Geometry,
    batch: usize,
    c_long: usize,
    c_short: usize,
    dk: &mut [f64],
) {
    for b in 0..batch {
        let lb = &long[b * g.long_len * c_long..(b + 1) * g.long_len * c_long];
        let sb = &short[b * g.short_len * c_short..(b + 1) * g.short_len * c_short];
        for i in 0..g.short_len {
            let sv = &sb[i * c_short..(i + 1) * c_short];
            for j in 0..g.k {
                let Some(t) = g.tap(i, j) else { continue };
                let xv = &lb[t * c_long..(t + 1) * c_long];
                for (ci, &x) in xv.iter().enumerate() {
                    let dr = &mut dk[(j * c_long + ci) * c_short..(j * c_long + ci + 1) * c_short];
                    for (d, &s) in dr.iter_mut().zip(sv) {
                        *d += x * s;
                    }
                }
            }
        }
    }
}

fn add_bias(out: &mut [f64], bias: &[f64]) {
    for chunk in out.chunks_mut(bias.len()) {
        for (o, b) in chunk.iter_mut().zip(bias) {
            *o += b;
        }
    }
}

fn bias_grad(g: &[f64], db: &mut [f64]) {
    let c = db.len();
    for chunk in g.chunks(c) {
        for (d, v) in db.iter_mut().zip(chunk) {
            *d += v;
        }
    }
}

#[derive(Clone, Debug)]
struct ConvCache {
    input: Tensor,
    output: Tensor,
    geometry: Geometry,
}

/// Strided 1-D convolution with kernel `[k × c_in × c_out]`.
#[derive(Clone, Debug)]
pub struct Conv1DLayer {
    pub kernel: Param,
    pub bias: Param,
    pub stride: usize,
    pub padding: Padding,
    pub activation: Activation,
    cache: Option<ConvCache>,
}

fn check_kernel_geometry(k: usize, stride: usize, padding: Padding) -> Result<()> {
    if k == 0 || stride == 0 {
        return Err(Error::Argument(format!(
            "kernel {k} and stride {stride} must be ≥ 1"
        )));
    }
    if padding == Padding::Half && stride == 1 {
        return Err(Error::Argument(
            "half padding is only used with stride > 1".into(),
        ));
    }
    Ok(())
}

impl Conv1DLayer {
    pub fn new(
        k: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        padding: Padding,
        activation: Activation,
        rng: &mut RngStream,
    ) -> Result<Self> {
        check_kernel_geometry(k, stride, padding)?;
        let bound = init_bound(k * c_in, activation);
        Ok(Self {
            kernel: Param::uniform(&[k, c_in, c_out], bound, ParamKind::ConvKernel, rng),
            bias: Param::new(Tensor::zeros(&[c_out]), ParamKind::Bias),
            stride,
            padding,
            activation,
            cache: None,
        })
    }

    pub fn from_parts(
        kernel: Tensor,
        bias: Tensor,
        stride: usize,
        padding: Padding,
        activation: Activation,
    ) -> Result<Self> {
        let [k, _, c_out] = kernel.shape() else {
            return dim_err(format!(
                "conv kernel must be [k × c_in × c_out], got {:?}",
                kernel.shape()
            ));
        };
        check_kernel_geometry(*k, stride, padding)?;
        bias.expect_shape(&[*c_out])?;
        Ok(Self {
            kernel: Param::new(kernel, ParamKind::ConvKernel),
            bias: Param::new(bias, ParamKind::Bias),
            stride,
            padding,
            activation,
            cache: None,
        })
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.value.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.value.shape()[2]
    }

    pub fn output_len(&self, in_len: usize) -> Result<usize> {
        conv1d_output_len(in_len, self.kernel_size(), self.stride, self.padding)
    }

    fn geometry(&self, in_len: usize) -> Result<Geometry> {
        let k = self.kernel_size();
        Ok(Geometry {
            k,
            stride: self.stride,
            pad: left_pad(in_len, k, self.stride, self.padding),
            long_len: in_len,
            short_len: self.output_len(in_len)?,
        })
    }

    fn compute(&self, x: &Tensor) -> Result<(Tensor, Geometry)> {
        let (b, l) = view3(x, self.in_channels())?;
        let g = self.geometry(l)?;
        let c_out = self.out_channels();
        let mut out = vec![0.0; b * g.short_len * c_out];
        long_to_short(
            x.data(),
            self.kernel.value.data(),
            g,
            b,
            self.in_channels(),
            c_out,
            &mut out,
        );
        add_bias(&mut out, self.bias.value.data());
        let pre = Tensor::new(vec![b, g.short_len, c_out], out)?;
        Ok((activation_forward(&pre, self.activation), g))
    }
}

impl Parameterized for Conv1DLayer {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "kernel"), &self.kernel);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "kernel"), &mut self.kernel);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

impl Module for Conv1DLayer {
    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let (output, geometry) = self.compute(x)?;
        self.cache = Some(ConvCache {
            input: x.clone(),
            output: output.clone(),
            geometry,
        });
        Ok(output)
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.compute(x)?.0)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let Some(cache) = self.cache.take() else {
            return no_cache("conv1d");
        };
        grad.expect_shape(cache.output.shape())?;
        let g = activation_backward(self.activation, &cache.output, grad);
        let (b, c_in, c_out) = (cache.input.rows(), self.in_channels(), self.out_channels());
        bias_grad(g.data(), self.bias.grad.data_mut());
        kernel_grad(
            cache.input.data(),
            g.data(),
            cache.geometry,
            b,
            c_in,
            c_out,
            self.kernel.grad.data_mut(),
        );
        let mut dx = vec![0.0; cache.input.len()];
        short_to_long(
            g.data(),
            self.kernel.value.data(),
            cache.geometry,
            b,
            c_in,
            c_out,
            &mut dx,
        );
        Tensor::new(cache.input.shape().to_vec(), dx)
    }

    fn relu_signature(&self, acc: &mut u64) {
        if self.activation == Activation::Relu {
            if let Some(c) = &self.cache {
                fold_mask(acc, &c.output);
            }
        }
    }
}

/// Adjoint of [`Conv1DLayer`]'s input map: expands a length that a
/// convolution with the same `k`, `stride` and `padding` would have produced
/// from `target_len` back to exactly `target_len`.
///
/// Kernel layout is `[k × c_out × c_in]` so that it indexes the same way as the
/// convolution it mirrors (the long side carries `c_out` channels).
#[derive(Clone, Debug)]
pub struct TransposedConv1DLayer {
    pub kernel: Param,
    pub bias: Param,
    pub stride: usize,
    pub padding: Padding,
    pub target_len: usize,
    pub activation: Activation,
    cache: Option<ConvCache>,
}

impl TransposedConv1DLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        k: usize,
        c_in: usize,
        c_out: usize,
        stride: usize,
        padding: Padding,
        target_len: usize,
        activation: Activation,
        rng: &mut RngStream,
    ) -> Result<Self> {
        check_kernel_geometry(k, stride, padding)?;
        conv1d_output_len(target_len, k, stride, padding)?;
        // Each output position receives about k / stride taps of c_in values.
        let fan_in = (k * c_in).div_ceil(stride);
        let bound = init_bound(fan_in, activation);
        Ok(Self {
            kernel: Param::uniform(&[k, c_out, c_in], bound, ParamKind::ConvKernel, rng),
            bias: Param::new(Tensor::zeros(&[c_out]), ParamKind::Bias),
            stride,
            padding,
            target_len,
            activation,
            cache: None,
        })
    }

    pub fn from_parts(
        kernel: Tensor,
        bias: Tensor,
        stride: usize,
        padding: Padding,
        target_len: usize,
        activation: Activation,
    ) -> Result<Self> {
        let [k, c_out, _] = kernel.shape() else {
            return dim_err(format!(
                "transposed conv kernel must be [k × c_out × c_in], got {:?}",
                kernel.shape()
            ));
        };
        check_kernel_geometry(*k, stride, padding)?;
        bias.expect_shape(&[*c_out])?;
        conv1d_output_len(target_len, *k, stride, padding)?;
        Ok(Self {
            kernel: Param::new(kernel, ParamKind::ConvKernel),
            bias: Param::new(bias, ParamKind::Bias),
            stride,
            padding,
            target_len,
            activation,
            cache: None,
        })
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel.value.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.value.shape()[1]
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.value.shape()[2]
    }

    /// Input length this layer accepts.
    pub fn input_len(&self) -> usize {
        conv1d_output_len(
            self.target_len,
            self.kernel_size(),
            self.stride,
            self.padding,
        )
        .expect("validated at construction")
    }

    /// Trailing positions beyond the span `(L_in − 1)·s + k − pad` covered by
    /// kernel taps, needed to land exactly on `target_len`.
    pub fn output_padding(&self) -> usize {
        let k = self.kernel_size();
        let span = (self.input_len() - 1) * self.stride + k
            - total_pad(self.target_len, k, self.stride, self.padding);
        self.target_len - span
    }

    fn geometry(&self) -> Geometry {
        let k = self.kernel_size();
        Geometry {
            k,
            stride: self.stride,
            pad: left_pad(self.target_len, k, self.stride, self.padding),
            long_len: self.target_len,
            short_len: self.input_len(),
        }
    }

    fn compute(&self, x: &Tensor) -> Result<(Tensor, Geometry)> {
        let (b, l) = view3(x, self.in_channels())?;
        let g = self.geometry();
        if l != g.short_len {
            return dim_err(format!(
                "transposed conv expects input length {}, got {l}",
                g.short_len
            ));
        }
        let c_out = self.out_channels();
        let mut out = vec![0.0; b * g.long_len * c_out];
        short_to_long(
            x.data(),
            self.kernel.value.data(),
            g,
            b,
            c_out,
            self.in_channels(),
            &mut out,
        );
        add_bias(&mut out, self.bias.value.data());
        let pre = Tensor::new(vec![b, g.long_len, c_out], out)?;
        Ok((activation_forward(&pre, self.activation), g))
    }
}

impl Parameterized for TransposedConv1DLayer {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "kernel"), &self.kernel);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "kernel"), &mut self.kernel);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

impl Module for TransposedConv1DLayer {
    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let (output, geometry) = self.compute(x)?;
        self.cache = Some(ConvCache {
            input: x.clone(),
            output: output.clone(),
            geometry,
        });
        Ok(output)
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.compute(x)?.0)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let Some(cache) = self.cache.take() else {
            return no_cache("transposed conv1d");
        };
        grad.expect_shape(cache.output.shape())?;
        let g = activation_backward(self.activation, &cache.output, grad);
        let (b, c_in, c_out) = (cache.input.rows(), self.in_channels(), self.out_channels());
        bias_grad(g.data(), self.bias.grad.data_mut());
        // Roles swap: the output is the long side.
        kernel_grad(
            g.data(),
            cache.input.data(),
            cache.geometry,
            b,
            c_out,
            c_in,
            self.kernel.grad.data_mut(),
        );
        let mut dx = vec![0.0; cache.input.len()];
        long_to_short(
            g.data(),
            self.kernel.value.data(),
            cache.geometry,
            b,
            c_out,
            c_in,
            &mut dx,
        );
        Tensor::new(cache.input.shape().to_vec(), dx)
    }

    fn relu_signature(&self, acc: &mut u64) {
        if self.activation == Activation::Relu {
            if let Some(c) = &self.cache {
                fold_mask(acc, &c.output);
            }
        }
    }
}
