use super::{
    activation_backward, activation_forward, fold_mask, init_bound, join, no_cache, Activation,
    Mode, Module, Param, ParamKind, Parameterized,
};
use crate::error::{dim_err, Result};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Fully connected layer, `activation(x · W + b)` with `W: [in × out]`.
///
/// Inputs of rank > 2 are flattened to `[B × in]`; the input gradient is
/// returned in the original shape.
#[derive(Clone, Debug)]
pub struct DenseLayer {
    pub weights: Param,
    pub bias: Param,
    pub activation: Activation,
    cache: Option<DenseCache>,
}

#[derive(Clone, Debug)]
struct DenseCache {
    input: Tensor,
    input_shape: Vec<usize>,
    output: Tensor,
}

impl DenseLayer {
    pub fn new(inputs: usize, outputs: usize, activation: Activation, rng: &mut RngStream) -> Self {
        let bound = init_bound(inputs, activation);
        Self {
            weights: Param::uniform(&[inputs, outputs], bound, ParamKind::DenseWeight, rng),
            bias: Param::new(Tensor::zeros(&[outputs]), ParamKind::Bias),
            activation,
            cache: None,
        }
    }

    pub fn from_parts(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        if weights.shape().len() != 2 {
            return dim_err(format!(
                "dense weights must be 2-D, got {:?}",
                weights.shape()
            ));
        }
        if bias.shape() != [weights.shape()[1]] {
            return dim_err(format!(
                "dense bias {:?} does not match weights {:?}",
                bias.shape(),
                weights.shape()
            ));
        }
        Ok(Self {
            weights: Param::new(weights, ParamKind::DenseWeight),
            bias: Param::new(bias, ParamKind::Bias),
            activation,
            cache: None,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weights.value.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weights.value.shape()[1]
    }

    fn flatten(&self, x: &Tensor) -> Result<Tensor> {
        if x.row_len() != self.inputs() {
            return dim_err(format!(
                "dense layer expects {} inputs per row, got {} (shape {:?})",
                self.inputs(),
                x.row_len(),
                x.shape()
            ));
        }
        x.clone().reshape(vec![x.rows(), self.inputs()])
    }

    fn affine(&self, x: &Tensor) -> Tensor {
        let (b, n_out) = (x.rows(), self.outputs());
        let w = self.weights.value.data();
        let mut out = Vec::with_capacity(b * n_out);
        for r in 0..b {
            let mut acc = self.bias.value.data().to_vec();
            for (i, &xi) in x.row(r).iter().enumerate() {
                if xi == 0.0 {
                    continue;
                }
                let wr = &w[i * n_out..(i + 1) * n_out];
                for (a, &wv) in acc.iter_mut().zip(wr) {
                    *a += xi * wv;
                }
            }
            out.extend(acc);
        }
        Tensor::new(vec![b, n_out], out).expect("dense output shape")
    }
}

/// `activation(x · W + b)` row-wise.
pub fn dense_forward(x: &Tensor, layer: &DenseLayer) -> Result<Tensor> {
    layer.infer(x)
}

impl Parameterized for DenseLayer {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weights);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weights);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

impl Module for DenseLayer {
    fn forward(&mut self, x: &Tensor, _mode: Mode) -> Result<Tensor> {
        let input = self.flatten(x)?;
        let output = activation_forward(&self.affine(&input), self.activation);
        self.cache = Some(DenseCache {
            input,
            input_shape: x.shape().to_vec(),
            output: output.clone(),
        });
        Ok(output)
    }

    fn infer(&self, x: &Tensor) -> Result<Tensor> {
        let input = self.flatten(x)?;
        Ok(activation_forward(&self.affine(&input), self.activation))
    }

    fn backward(&mut self, grad: &Tensor) -> Result<Tensor> {
        let Some(cache) = self.cache.take() else {
            return no_cache("dense");
        };
        grad.expect_shape(cache.output.shape())?;
        let g = activation_backward(self.activation, &cache.output, grad);
        let (b, n_in, n_out) = (cache.input.rows(), self.inputs(), self.outputs());
        let w = self.weights.value.data();
        let dw = self.weights.grad.data_mut();
        let db = self.bias.grad.data_mut();
        let mut dx = vec![0.0; b * n_in];
        for r in 0..b {
            let gr = g.row(r);
            let xr = cache.input.row(r);
            for (d, &gv) in db.iter_mut().zip(gr) {
                *d += gv;
            }
            for i in 0..n_in {
                let wr = &w[i * n_out..(i + 1) * n_out];
                let dwr = &mut dw[i * n_out..(i + 1) * n_out];
                let xi = xr[i];
                let mut s = 0.0;
                for o in 0..n_out {
                    dwr[o] += xi * gr[o];
                    s += wr[o] * gr[o];
                }
                dx[r * n_in + i] = s;
            }
        }
        Tensor::new(cache.input_shape, dx)
    }

    fn relu_signature(&self, acc: &mut u64) {
        if self.activation == Activation::Relu {
            if let Some(c) = &self.cache {
                fold_mask(acc, &c.output);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(w: Vec<Vec<f64>>, b: Vec<f64>, act: Activation) -> DenseLayer {
        let w = Tensor::from_rows(&w).unwrap();
        let n = b.len();
        DenseLayer::from_parts(w, Tensor::new(vec![n], b).unwrap(), act).unwrap()
    }

    #[test]
    fn identity_weights() {
        let l = layer(
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![0.0, 0.0],
            Activation::Linear,
        );
        let y = dense_forward(&Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap(), &l).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_input_passes_bias() {
        let l = layer(
            vec![vec![4.0, 5.0], vec![6.0, 7.0]],
            vec![3.0, -1.0],
            Activation::Linear,
        );
        let y = dense_forward(&Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap(), &l).unwrap();
        assert_eq!(y.data(), &[3.0, -1.0]);
    }

    #[test]
    fn relu_clamps_negative_preactivation() {
        let l = layer(vec![vec![2.0], vec![-3.0]], vec![0.0], Activation::Relu);
        let y = dense_forward(&Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap(), &l).unwrap();
        assert_eq!(y.data(), &[0.0]);
    }

    #[test]
    fn width_mismatch_is_dimension_error() {
        let l = layer(vec![vec![1.0], vec![1.0]], vec![0.0], Activation::Linear);
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(matches!(
            dense_forward(&x, &l),
            Err(crate::Error::Dimension(_))
        ));
    }

    #[test]
    fn half_squared_norm_gives_xt_y() {
        // loss = 1/2 ||y||^2 with y = x W  =>  dW = x^T y
        let mut l = layer(
            vec![vec![0.5, -1.0, 2.0], vec![1.5, 0.25, -0.5]],
            vec![0.0; 3],
            Activation::Linear,
        );
        let x = Tensor::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]).unwrap();
        let y = l.forward(&x, Mode::Train).unwrap();
        l.backward(&y).unwrap();
        for i in 0..2 {
            for o in 0..3 {
                let expect: f64 = (0..2).map(|b| x.row(b)[i] * y.row(b)[o]).sum();
                assert!((l.weights.grad.data()[i * 3 + o] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_without_forward_is_state_error() {
        let mut l = layer(vec![vec![1.0]], vec![0.0], Activation::Linear);
        let g = Tensor::zeros(&[1, 1]);
        assert!(matches!(l.backward(&g), Err(crate::Error::State(_))));
    }
}
