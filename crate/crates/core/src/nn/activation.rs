use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
    /// Row-wise softmax along the last axis.
    Softmax,
    Sigmoid,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Linear => 1,
            Activation::Softmax => 2,
            Activation::Sigmoid => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Activation::Relu,
            1 => Activation::Linear,
            2 => Activation::Softmax,
            3 => Activation::Sigmoid,
            _ => return None,
        })
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn activation_forward(x: &Tensor, kind: Activation) -> Tensor {
    match kind {
        Activation::Linear => x.clone(),
        Activation::Relu => x.map(|v| v.max(0.0)),
        Activation::Sigmoid => x.map(sigmoid),
        Activation::Softmax => {
            let mut out = x.clone();
            let w = *x.shape().last().expect("non-empty shape");
            out.data_mut().chunks_mut(w).for_each(softmax_in_place);
            out
        }
    }
}

/// Gradient w.r.t. the pre-activation, given the forward *output* `y`.
pub fn activation_backward(kind: Activation, y: &Tensor, grad: &Tensor) -> Tensor {
    match kind {
        Activation::Linear => grad.clone(),
        Activation::Relu => y
            .zip_map(grad, |y, g| if y > 0.0 { g } else { 0.0 })
            .expect("same shape"),
        Activation::Sigmoid => y
            .zip_map(grad, |y, g| g * y * (1.0 - y))
            .expect("same shape"),
        Activation::Softmax => {
            let w = *y.shape().last().expect("non-empty shape");
            let mut out = grad.clone();
            for (o, (yr, gr)) in out
                .data_mut()
                .chunks_mut(w)
                .zip(y.data().chunks(w).zip(grad.data().chunks(w)))
            {
                let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                for (oi, (yi, gi)) in o.iter_mut().zip(yr.iter().zip(gr)) {
                    *oi = yi * (gi - dot);
                }
            }
            out
        }
    }
}
