//! Batched LSTM layer with step-wise caches for backpropagation
//! through time.
//!
//! Gate layout in the fused weight matrices is i|f|g|o:
//!   i = sigmoid(a_i), f = sigmoid(a_f), g = tanh(a_g), o = sigmoid(a_o)
//!   c' = f * c + i * g
//!   h' = o * tanh(c')
//! The forget-gate bias starts at 1.0 so early training does not flush
//! the cell state.

use super::{add_bias, accum_bias_grad, recurrent_uniform, sigmoid, Mat, ParamTensor};
use crate::rng::Rng;
use ndarray::{linalg::general_mat_mul, s, Array2};

#[derive(Debug)]
pub struct LstmCache {
    x: Mat,
    h_prev: Mat,
    c_prev: Mat,
    i: Mat,
    f: Mat,
    g: Mat,
    o: Mat,
    /// tanh of the new cell state.
    tc: Mat,
}

#[derive(Debug, Clone)]
pub struct Lstm {
    /// [n_in, 4H]
    pub w_ih: ParamTensor,
    /// [H, 4H]
    pub w_hh: ParamTensor,
    pub b_ih: ParamTensor,
    pub b_hh: ParamTensor,
    pub n_in: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new(name: &str, n_in: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut b_ih = ParamTensor::zeros(&format!("{name}.b_ih"), &[4 * hidden]);
        b_ih.value
            .slice_mut(s![hidden..2 * hidden])
            .fill(1.0);
        Lstm {
            w_ih: ParamTensor::new(
                &format!("{name}.w_ih"),
                recurrent_uniform(rng, n_in, 4 * hidden, hidden).into_dyn(),
            ),
            w_hh: ParamTensor::new(
                &format!("{name}.w_hh"),
                recurrent_uniform(rng, hidden, 4 * hidden, hidden).into_dyn(),
            ),
            b_ih,
            b_hh: ParamTensor::zeros(&format!("{name}.b_hh"), &[4 * hidden]),
            n_in,
            hidden,
        }
    }

    pub fn zero_state(&self, batch: usize) -> (Mat, Mat) {
        (Array2::zeros((batch, self.hidden)), Array2::zeros((batch, self.hidden)))
    }

    fn preact(&self, x: &Mat, h_prev: &Mat) -> Mat {
        let mut a = x.dot(&self.w_ih.as2());
        add_bias(&mut a, &self.b_ih.as1());
        let mut gh = h_prev.dot(&self.w_hh.as2());
        add_bias(&mut gh, &self.b_hh.as1());
        a += &gh;
        a
    }

    /// One step over a batch; returns (h, c, cache).
    pub fn step(&self, x: &Mat, h_prev: &Mat, c_prev: &Mat) -> (Mat, Mat, LstmCache) {
        let hs = self.hidden;
        let a = self.preact(x, h_prev);

        let i = a.slice(s![.., 0..hs]).mapv(sigmoid);
        let f = a.slice(s![.., hs..2 * hs]).mapv(sigmoid);
        let g = a.slice(s![.., 2 * hs..3 * hs]).mapv(f32::tanh);
        let o = a.slice(s![.., 3 * hs..4 * hs]).mapv(sigmoid);

        let c = &(&f * c_prev) + &(&i * &g);
        let tc = c.mapv(f32::tanh);
        let h = &o * &tc;

        let cache = LstmCache {
            x: x.clone(),
            h_prev: h_prev.clone(),
            c_prev: c_prev.clone(),
            i,
            f,
            g,
            o,
            tc,
        };
        (h, c, cache)
    }

    /// Inference-only step; returns (h, c).
    pub fn step_nocache(&self, x: &Mat, h_prev: &Mat, c_prev: &Mat) -> (Mat, Mat) {
        let hs = self.hidden;
        let a = self.preact(x, h_prev);
        let i = a.slice(s![.., 0..hs]).mapv(sigmoid);
        let f = a.slice(s![.., hs..2 * hs]).mapv(sigmoid);
        let g = a.slice(s![.., 2 * hs..3 * hs]).mapv(f32::tanh);
        let o = a.slice(s![.., 3 * hs..4 * hs]).mapv(sigmoid);
        let c = &(&f * c_prev) + &(&i * &g);
        let h = &o * &c.mapv(f32::tanh);
        (h, c)
    }

    /// Accumulates parameter grads; returns (dx, dh_prev, dc_prev).
    pub fn backward_step(&mut self, cache: &LstmCache, dh: &Mat, dc: &Mat) -> (Mat, Mat, Mat) {
        let hs = self.hidden;
        let b = dh.nrows();

        let d_o = dh * &cache.tc;
        let mut dc_total = dh * &cache.o;
        dc_total.zip_mut_with(&cache.tc, |d, &t| *d *= 1.0 - t * t);
        dc_total += dc;

        let di = &dc_total * &cache.g;
        let df = &dc_total * &cache.c_prev;
        let dg = &dc_total * &cache.i;
        let dc_prev = &dc_total * &cache.f;

        let mut da: Mat = Array2::zeros((b, 4 * hs));
        {
            let mut sl = da.slice_mut(s![.., 0..hs]);
            sl.assign(&di);
            ndarray::Zip::from(&mut sl).and(&cache.i).for_each(|d, &v| *d *= v * (1.0 - v));
        }
        {
            let mut sl = da.slice_mut(s![.., hs..2 * hs]);
            sl.assign(&df);
            ndarray::Zip::from(&mut sl).and(&cache.f).for_each(|d, &v| *d *= v * (1.0 - v));
        }
        {
            let mut sl = da.slice_mut(s![.., 2 * hs..3 * hs]);
            sl.assign(&dg);
            ndarray::Zip::from(&mut sl).and(&cache.g).for_each(|d, &v| *d *= 1.0 - v * v);
        }
        {
            let mut sl = da.slice_mut(s![.., 3 * hs..4 * hs]);
            sl.assign(&d_o);
            ndarray::Zip::from(&mut sl).and(&cache.o).for_each(|d, &v| *d *= v * (1.0 - v));
        }

        general_mat_mul(1.0, &cache.x.t(), &da, 1.0, &mut self.w_ih.grad_as2());
        general_mat_mul(1.0, &cache.h_prev.t(), &da, 1.0, &mut self.w_hh.grad_as2());
        accum_bias_grad(&mut self.b_ih.grad, &da);
        accum_bias_grad(&mut self.b_hh.grad, &da);

        let dx = da.dot(&self.w_ih.as2().t());
        let dh_prev = da.dot(&self.w_hh.as2().t());
        (dx, dh_prev, dc_prev)
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        vec![&mut self.w_ih, &mut self.w_hh, &mut self.b_ih, &mut self.b_hh]
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        vec![&self.w_ih, &self.w_hh, &self.b_ih, &self.b_hh]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{assert_close, fd_grad_obj};
    use crate::rng::stream;
    use rand::Rng as _;

    fn run_loss(l: &Lstm, xs: &[Mat], h0: &Mat, c0: &Mat, cs: &[Mat]) -> f64 {
        let (mut h, mut c) = (h0.clone(), c0.clone());
        let mut total = 0.0f64;
        for (x, coef) in xs.iter().zip(cs) {
            let (h2, c2) = l.step_nocache(x, &h, &c);
            h = h2;
            c = c2;
            total += h.iter().zip(coef.iter()).map(|(&a, &b)| (a * b) as f64).sum::<f64>();
        }
        total
    }

    #[test]
    fn bptt_gradients_match_finite_differences() {
        let (n_in, hidden, batch, steps) = (3usize, 4usize, 2usize, 3usize);
        let mut rng = stream(11, "lstm-test");
        let mut l = Lstm::new("l", n_in, hidden, &mut rng);
        let xs: Vec<Mat> = (0..steps)
            .map(|_| Array2::from_shape_fn((batch, n_in), |_| rng.random_range(-1.0f32..1.0)))
            .collect();
        let cs: Vec<Mat> = (0..steps)
            .map(|_| Array2::from_shape_fn((batch, hidden), |_| rng.random_range(-1.0f32..1.0)))
            .collect();
        let h0 = Array2::from_shape_fn((batch, hidden), |_| rng.random_range(-0.5f32..0.5));
        let c0 = Array2::from_shape_fn((batch, hidden), |_| rng.random_range(-0.5f32..0.5));

        let mut caches = Vec::new();
        let (mut h, mut c) = (h0.clone(), c0.clone());
        for x in &xs {
            let (h2, c2, cache) = l.step(x, &h, &c);
            caches.push(cache);
            h = h2;
            c = c2;
        }
        for p in l.params_mut() {
            p.zero_grad();
        }
        let mut dh: Mat = Array2::zeros((batch, hidden));
        let mut dc: Mat = Array2::zeros((batch, hidden));
        let mut dx0 = Array2::zeros((batch, n_in));
        for t in (0..steps).rev() {
            dh += &cs[t];
            let (dx, dh_prev, dc_prev) = l.backward_step(&caches[t], &dh, &dc);
            if t == 0 {
                dx0 = dx;
            }
            dh = dh_prev;
            dc = dc_prev;
        }

        let cs2 = cs.clone();
        let mut obj = (l.clone(), xs.clone(), h0.clone(), c0.clone());
        let loss =
            move |o: &(Lstm, Vec<Mat>, Mat, Mat)| run_loss(&o.0, &o.1, &o.2, &o.3, &cs2);

        let fd = fd_grad_obj(&mut obj, |o| o.0.w_ih.value.as_slice_mut().unwrap(), &loss, 1e-2);
        assert_close(l.w_ih.grad.as_slice().unwrap(), &fd, "dW_ih");
        let fd = fd_grad_obj(&mut obj, |o| o.0.w_hh.value.as_slice_mut().unwrap(), &loss, 1e-2);
        assert_close(l.w_hh.grad.as_slice().unwrap(), &fd, "dW_hh");
        let fd = fd_grad_obj(&mut obj, |o| o.0.b_ih.value.as_slice_mut().unwrap(), &loss, 1e-2);
        assert_close(l.b_ih.grad.as_slice().unwrap(), &fd, "db_ih");
        let fd = fd_grad_obj(&mut obj, |o| o.1[0].as_slice_mut().unwrap(), &loss, 1e-2);
        assert_close(dx0.as_slice().unwrap(), &fd, "dx0");
        let fd = fd_grad_obj(&mut obj, |o| o.2.as_slice_mut().unwrap(), &loss, 1e-2);
        assert_close(dh.as_slice().unwrap(), &fd, "dh0");
        let fd = fd_grad_obj(&mut obj, |o| o.3.as_slice_mut().unwrap(), &loss, 1e-2);
        assert_close(dc.as_slice().unwrap(), &fd, "dc0");
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let mut rng = stream(12, "lstm-test2");
        let l = Lstm::new("l", 2, 3, &mut rng);
        let b = l.b_ih.as1();
        assert!((0..3).all(|j| b[3 + j] == 1.0));
        assert!((0..3).all(|j| b[j] == 0.0));
    }
}
