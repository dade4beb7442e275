//! Fully connected layer with explicit backward.

use super::{accum_bias_grad, add_bias, xavier_uniform, Mat, ParamTensor};
use crate::rng::Rng;
use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, ArrayD, IxDyn};

#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamTensor, // [in, out]
    pub b: ParamTensor, // [out]
    pub n_in: usize,
    pub n_out: usize,
}

impl Linear {
    pub fn new(name: &str, n_in: usize, n_out: usize, rng: &mut Rng) -> Self {
        let w = xavier_uniform(rng, n_in, n_out).into_dyn();
        let b = ArrayD::zeros(IxDyn(&[n_out]));
        Linear {
            w: ParamTensor::new(&format!("{name}.w"), w),
            b: ParamTensor::new(&format!("{name}.b"), b),
            n_in,
            n_out,
        }
    }

    /// x [B, in] -> y [B, out].
    pub fn forward(&self, x: &Mat) -> Mat {
        let mut y = x.dot(&self.w.as2());
        add_bias(&mut y, &self.b.as1());
        y
    }

    /// Accumulates dW += x^T dy and db += sum(dy); returns dx = dy W^T.
    pub fn backward(&mut self, x: &Mat, dy: &Mat) -> Mat {
        {
            let mut dw = self.w.grad.view_mut().into_dimensionality::<ndarray::Ix2>().unwrap();
            general_mat_mul(1.0, &x.t(), dy, 1.0, &mut dw);
        }
        accum_bias_grad(&mut self.b.grad, dy);
        dy.dot(&self.w.as2().t())
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        vec![&self.w, &self.b]
    }

    /// Deterministic forward for a single row without allocation churn.
    pub fn forward_vec(&self, x: &Array1<f32>) -> Array1<f32> {
        let mut y = x.dot(&self.w.as2());
        y += &self.b.as1();
        y
    }
}
