//! 1-D convolution (stride 1, zero "same" padding) via im2col, plus a
//! width-2 max pool. Data layout is [batch, channels, length].

use super::{Mat, ParamTensor, recurrent_uniform};
use crate::rng::Rng;
use ndarray::{linalg::general_mat_mul, Array2, Array3};

#[derive(Debug)]
pub struct Conv1dCache {
    cols: Mat,
    batch: usize,
    len: usize,
}

#[derive(Debug, Clone)]
pub struct Conv1d {
    /// [c_in * k, c_out]
    pub w: ParamTensor,
    pub b: ParamTensor,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pad_left: usize,
}

impl Conv1d {
    pub fn new(name: &str, c_in: usize, c_out: usize, k: usize, rng: &mut Rng) -> Self {
        let fan_in = c_in * k;
        Conv1d {
            w: ParamTensor::new(
                &format!("{name}.w"),
                recurrent_uniform(rng, fan_in, c_out, fan_in).into_dyn(),
            ),
            b: ParamTensor::zeros(&format!("{name}.b"), &[c_out]),
            c_in,
            c_out,
            k,
            // Even kernels pad one more on the right, keeping out_len == in_len.
            pad_left: (k - 1) / 2,
        }
    }

    fn im2col(&self, x: &Array3<f32>) -> Mat {
        let (batch, c_in, len) = x.dim();
        assert_eq!(c_in, self.c_in);
        let mut cols: Mat = Array2::zeros((batch * len, c_in * self.k));
        for bi in 0..batch {
            for l in 0..len {
                let row = bi * len + l;
                for c in 0..c_in {
                    for j in 0..self.k {
                        let src = l + j;
                        if src >= self.pad_left && src - self.pad_left < len {
                            cols[[row, c * self.k + j]] = x[[bi, c, src - self.pad_left]];
                        }
                    }
                }
            }
        }
        cols
    }

    fn cols_to_out(&self, y2: &Mat, batch: usize, len: usize) -> Array3<f32> {
        let mut y = Array3::zeros((batch, self.c_out, len));
        for bi in 0..batch {
            for l in 0..len {
                for c in 0..self.c_out {
                    y[[bi, c, l]] = y2[[bi * len + l, c]];
                }
            }
        }
        y
    }

    pub fn forward(&self, x: &Array3<f32>) -> Array3<f32> {
        let (batch, _, len) = x.dim();
        let cols = self.im2col(x);
        let mut y2 = cols.dot(&self.w.as2());
        super::add_bias(&mut y2, &self.b.as1());
        self.cols_to_out(&y2, batch, len)
    }

    pub fn forward_cached(&self, x: &Array3<f32>) -> (Array3<f32>, Conv1dCache) {
        let (batch, _, len) = x.dim();
        let cols = self.im2col(x);
        let mut y2 = cols.dot(&self.w.as2());
        super::add_bias(&mut y2, &self.b.as1());
        let y = self.cols_to_out(&y2, batch, len);
        (y, Conv1dCache { cols, batch, len })
    }

    /// Accumulates parameter grads; returns dL/dx.
    pub fn backward(&mut self, cache: &Conv1dCache, dy: &Array3<f32>) -> Array3<f32> {
        let (batch, len) = (cache.batch, cache.len);
        let mut dy2: Mat = Array2::zeros((batch * len, self.c_out));
        for bi in 0..batch {
            for l in 0..len {
                for c in 0..self.c_out {
                    dy2[[bi * len + l, c]] = dy[[bi, c, l]];
                }
            }
        }
        general_mat_mul(1.0, &cache.cols.t(), &dy2, 1.0, &mut self.w.grad_as2());
        super::accum_bias_grad(&mut self.b.grad, &dy2);

        let dcols = dy2.dot(&self.w.as2().t());
        let mut dx = Array3::zeros((batch, self.c_in, len));
        for bi in 0..batch {
            for l in 0..len {
                let row = bi * len + l;
                for c in 0..self.c_in {
                    for j in 0..self.k {
                        let src = l + j;
                        if src >= self.pad_left && src - self.pad_left < len {
                            dx[[bi, c, src - self.pad_left]] += dcols[[row, c * self.k + j]];
                        }
                    }
                }
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![&mut self.w, &mut self.b]
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        vec![&self.w, &self.b]
    }
}

#[derive(Debug)]
pub struct PoolCache {
    /// Flat index (within the length axis) of each max element.
    argmax: Array3<usize>,
    in_len: usize,
}

/// Max pool of width 2, stride 2; odd trailing elements are dropped.
#[derive(Debug, Clone, Copy)]
pub struct MaxPool1d;

impl MaxPool1d {
    pub fn forward(&self, x: &Array3<f32>) -> (Array3<f32>, PoolCache) {
        let (batch, ch, len) = x.dim();
        let out_len = len / 2;
        let mut y = Array3::zeros((batch, ch, out_len));
        let mut argmax = Array3::zeros((batch, ch, out_len));
        for bi in 0..batch {
            for c in 0..ch {
                for l in 0..out_len {
                    let (a, b) = (x[[bi, c, 2 * l]], x[[bi, c, 2 * l + 1]]);
                    if a >= b {
                        y[[bi, c, l]] = a;
                        argmax[[bi, c, l]] = 2 * l;
                    } else {
                        y[[bi, c, l]] = b;
                        argmax[[bi, c, l]] = 2 * l + 1;
                    }
                }
            }
        }
        (y, PoolCache { argmax, in_len: len })
    }

    pub fn backward(&self, cache: &PoolCache, dy: &Array3<f32>) -> Array3<f32> {
        let (batch, ch, out_len) = dy.dim();
        let mut dx = Array3::zeros((batch, ch, cache.in_len));
        for bi in 0..batch {
            for c in 0..ch {
                for l in 0..out_len {
                    dx[[bi, c, cache.argmax[[bi, c, l]]]] += dy[[bi, c, l]];
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{assert_close, fd_grad_obj};
    use crate::rng::stream;
    use rand::Rng as _;

    #[test]
    fn same_padding_preserves_length_and_matches_hand_case() {
        let mut rng = stream(20, "conv-test");
        let mut conv = Conv1d::new("c", 1, 1, 3, &mut rng);
        conv.w.value.as_slice_mut().unwrap().copy_from_slice(&[1.0, 2.0, 3.0]);
        conv.b.value.fill(0.5);
        let x = Array3::from_shape_vec((1, 1, 4), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = conv.forward(&x);
        assert_eq!(y.dim(), (1, 1, 4));
        // k=3 pads one zero each side: y_l = 1*x[l-1] + 2*x[l] + 3*x[l+1] + 0.5
        assert_eq!(y[[0, 0, 0]], 2.0 * 1.0 + 3.0 * 2.0 + 0.5);
        assert_eq!(y[[0, 0, 1]], 1.0 * 1.0 + 2.0 * 2.0 + 3.0 * 3.0 + 0.5);
        assert_eq!(y[[0, 0, 3]], 1.0 * 3.0 + 2.0 * 4.0 + 0.5);
    }

    #[test]
    fn even_kernel_pads_more_on_the_right() {
        let mut rng = stream(21, "conv-test2");
        let conv = Conv1d::new("c", 2, 3, 8, &mut rng);
        let x = Array3::from_shape_fn((2, 2, 10), |_| rng.random_range(-1.0f32..1.0));
        let y = conv.forward(&x);
        assert_eq!(y.dim(), (2, 3, 10));
        assert_eq!(conv.pad_left, 3);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = stream(22, "conv-test3");
        let mut conv = Conv1d::new("c", 2, 3, 3, &mut rng);
        let x = Array3::from_shape_fn((2, 2, 5), |_| rng.random_range(-1.0f32..1.0));
        let coef = Array3::from_shape_fn((2, 3, 5), |_| rng.random_range(-1.0f32..1.0));

        let (_, cache) = conv.forward_cached(&x);
        conv.w.zero_grad();
        conv.b.zero_grad();
        let dx = conv.backward(&cache, &coef);

        let coef2 = coef.clone();
        let mut obj = (conv.clone(), x.clone());
        let loss = move |o: &(Conv1d, Array3<f32>)| -> f64 {
            o.0.forward(&o.1).iter().zip(coef2.iter()).map(|(&y, &c)| (y * c) as f64).sum()
        };

        let fd = fd_grad_obj(&mut obj, |o| o.0.w.value.as_slice_mut().unwrap(), &loss, 1e-2);
        assert_close(conv.w.grad.as_slice().unwrap(), &fd, "dW");
        let fd = fd_grad_obj(&mut obj, |o| o.0.b.value.as_slice_mut().unwrap(), &loss, 1e-2);
        assert_close(conv.b.grad.as_slice().unwrap(), &fd, "db");
        let fd = fd_grad_obj(&mut obj, |o| o.1.as_slice_mut().unwrap(), &loss, 1e-2);
        assert_close(dx.as_slice().unwrap(), &fd, "dx");
    }

    #[test]
    fn maxpool_selects_and_routes() {
        let x = Array3::from_shape_vec((1, 1, 6), vec![1.0, 5.0, 2.0, 2.0, -3.0, -1.0]).unwrap();
        let (y, cache) = MaxPool1d.forward(&x);
        assert_eq!(y.as_slice().unwrap(), &[5.0, 2.0, -1.0]);
        // Ties take the left element.
        assert_eq!(cache.argmax[[0, 0, 1]], 2);
        let dy = Array3::from_shape_vec((1, 1, 3), vec![1.0, 2.0, 3.0]).unwrap();
        let dx = MaxPool1d.backward(&cache, &dy);
        assert_eq!(dx.as_slice().unwrap(), &[0.0, 1.0, 2.0, 0.0, 0.0, 3.0]);
    }

    #[test]
    fn odd_length_drops_trailing_element() {
        let x = Array3::from_shape_vec((1, 1, 5), vec![1.0, 2.0, 3.0, 4.0, 9.0]).unwrap();
        let (y, cache) = MaxPool1d.forward(&x);
        assert_eq!(y.dim(), (1, 1, 2));
        let dy = Array3::ones((1, 1, 2));
        let dx = MaxPool1d.backward(&cache, &dy);
        assert_eq!(dx[[0, 0, 4]], 0.0);
    }
}
