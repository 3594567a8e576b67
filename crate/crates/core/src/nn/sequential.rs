use super::{
    join, BatchNorm1D, Conv1DLayer, DenseLayer, Mode, Module, Param, Parameterized,
    TransposedConv1DLayer,
};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub enum Layer {
    Dense(DenseLayer),
    Conv(Conv1DLayer),
    TransposedConv(TransposedConv1DLayer),
    BatchNorm(BatchNorm1D),
}

impl Layer {
    fn module(&self) -> &dyn Module {
        match self {
            Layer::Dense(l) => l,
            Layer::Conv(l) => l,
            Layer::TransposedConv(l) => l,
            Layer::BatchNorm(l) => l,
        }
    }

    fn module_mut(&mut self) -> &mut dyn Module {
        match self {
            Layer::Dense(l) => l,
            Layer::Conv(l) => l,
            Layer::TransposedConv(l) => l,
            Layer::BatchNorm(l) => l,
        }
    }
}

impl Parameterized for Layer {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.module().visit_params(prefix, f)
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.module_mut().visit_params_mut(prefix, f)
    }
}

impl Module for Layer {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        self.module_mut().forward(x, mode)
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.module().infer(x)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        self.module_mut().backward(grad)
    }

    fn relu_signature(&self, acc: &mut u64) {
        self.module().relu_signature(acc)
    }
}

/// Ordered layer stack. Parameters are named `<index>.<param>`.
#[derive(Clone, Debug, Default)]
pub struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn new(layers: Vec<Layer>) -> Self {
        Self { layers }
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl Parameterized for Sequential {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit_params(&join(prefix, &i.to_string()), f);
        }
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_params_mut(&join(prefix, &i.to_string()), f);
        }
    }
}

impl Module for Sequential {
    fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<Tensor> {
        let mut h = x.clone();
        for l in &mut self.layers {
            h = l.forward(&h, mode)?;
        }
        Ok(h)
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for l in &self.layers {
            h = l.infer(&h)?;
        }
        Ok(h)
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let mut g = grad.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(g)
    }

    fn relu_signature(&self, acc: &mut u64) {
        self.layers.iter().for_each(|l| l.relu_signature(acc));
    }
}
