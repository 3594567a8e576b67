//! Minimal differentiable-network core with hand-derived backward passes.
//!
//! Layers cache what they need during [`Module::forward`] and consume that
//! cache in [`Module::backward`], accumulating parameter gradients into each
//! [`Param`]. [`Module::infer`] is the pure, cache-free path used by frozen
//! models, so inference only needs `&self`.

mod activation;
mod batchnorm;
mod conv;
mod dense;
pub mod gradcheck;
mod sequential;

use std::collections::BTreeMap;

pub use activation::{activation_backward, activation_forward, Activation};
pub use batchnorm::{batchnorm_forward, BatchNorm1D, BN_EPSILON, BN_MOMENTUM};
pub use conv::{conv1d_output_len, receptive_field, Conv1DLayer, Padding, TransposedConv1DLayer};
pub use dense::{dense_forward, DenseLayer};
pub use gradcheck::{
    grad_check, grad_check_with_floor, Evaluation, GradCheckReport, GradCheckable, ModuleProbe,
    ParamCheck,
};
pub use sequential::{Layer, Sequential};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics for batch norm; running statistics are updated.
    Train,
    /// Running statistics for batch norm.
    Infer,
}

/// What a parameter is, for regularization decisions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    DenseWeight,
    /// Convolution or transposed-convolution kernel; the only kind that
    /// receives the L2 penalty.
    ConvKernel,
    Bias,
    Gamma,
    Beta,
}

#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    pub kind: ParamKind,
}

impl Param {
    pub fn new(value: Tensor, kind: ParamKind) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad, kind }
    }

    /// Uniform init in `[-bound, bound]`.
    pub fn uniform(shape: &[usize], bound: f64, kind: ParamKind, rng: &mut RngStream) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| (2.0 * rng.uniform() - 1.0) * bound)
            .collect();
        Self::new(Tensor::new(shape.to_vec(), data).expect("shape"), kind)
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Fan-in scaled uniform bound: He-style for relu, LeCun-style otherwise.
pub fn init_bound(fan_in: usize, activation: Activation) -> f64 {
    let gain = if activation == Activation::Relu {
        6.0
    } else {
        3.0
    };
    (gain / fan_in.max(1) as f64).sqrt()
}

/// Anything owning named parameters.
pub trait Parameterized {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param));
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));

    fn zero_grad(&mut self) {
        self.visit_params_mut("", &mut |_, p| p.zero_grad());
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, p| n += p.value.len());
        n
    }

    /// FNV-1a over the bit patterns of every parameter value, in visit order.
    fn checksum(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        self.visit_params("", &mut |_, p| {
            for v in p.value.data() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x0100_0000_01b3);
                }
            }
        });
        h
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// A differentiable layer or stack of layers.
pub trait Module: Parameterized {
    /// Forward pass that caches activations for a later [`Module::backward`].
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor>;

    /// Forward pass with running statistics and no caching.
    fn infer(&self, x: &Tensor) -> Result<Tensor>;

    /// Consumes the cached forward state, accumulates parameter gradients and
    /// returns the gradient with respect to the forward input.
    fn backward(&mut self, grad: &Tensor) -> Result<Tensor>;

    /// Folds the on/off pattern of every cached relu unit into `acc`.
    fn relu_signature(&self, acc: &mut u64);
}

pub(crate) fn fold_mask(acc: &mut u64, out: &Tensor) {
    for v in out.data() {
        *acc ^= (*v > 0.0) as u64;
        *acc = acc.wrapping_mul(0x0100_0000_01b3);
    }
}

pub(crate) fn no_cache<T>(layer: &str) -> Result<T> {
    Err(Error::State(format!(
        "{layer}: backward called without a cached forward pass"
    )))
}

/// Gradients keyed by stable parameter identifier.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradStore {
    grads: BTreeMap<String, Tensor>,
}

impl GradStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Snapshot of every parameter's accumulated gradient.
    pub fn collect(model: &dyn Parameterized) -> Self {
        let mut grads = BTreeMap::new();
        model.visit_params("", &mut |name, p| {
            grads.insert(name.to_string(), p.grad.clone());
        });
        Self { grads }
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor) {
        self.grads.insert(name.into(), grad);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.grads.get(name)
    }

    /// Adds `other` into `self` entry-wise; entries missing here are copied.
    pub fn accumulate(&mut self, other: &GradStore) -> Result<()> {
        for (k, g) in &other.grads {
            match self.grads.get_mut(k) {
                Some(mine) => mine.add_assign(g)?,
                None => {
                    self.grads.insert(k.clone(), g.clone());
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }
}
