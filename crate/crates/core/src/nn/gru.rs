//! Batched GRU layer: one time step at a time, with caches for
//! backpropagation through time.
//!
//! Gate layout in the fused weight matrices is r|z|n:
//!   r = sigmoid(x W_ih[r] + b_ih[r] + h W_hh[r] + b_hh[r])
//!   z = sigmoid(x W_ih[z] + b_ih[z] + h W_hh[z] + b_hh[z])
//!   n = tanh(x W_ih[n] + b_ih[n] + r * (h W_hh[n] + b_hh[n]))
//!   h' = (1 - z) * n + z * h

use super::{add_bias, accum_bias_grad, recurrent_uniform, sigmoid, Mat, ParamTensor};
use crate::rng::Rng;
use ndarray::{linalg::general_mat_mul, s, Array2};

/// Per-step values needed by the backward pass.
#[derive(Debug)]
pub struct GruCache {
    x: Mat,
    h_prev: Mat,
    r: Mat,
    z: Mat,
    n: Mat,
    /// Recurrent contribution to the candidate gate, pre-reset.
    gh_n: Mat,
}

#[derive(Debug, Clone)]
pub struct Gru {
    /// [n_in, 3H]
    pub w_ih: ParamTensor,
    /// [H, 3H]
    pub w_hh: ParamTensor,
    pub b_ih: ParamTensor,
    pub b_hh: ParamTensor,
    pub n_in: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new(name: &str, n_in: usize, hidden: usize, rng: &mut Rng) -> Self {
        Gru {
            w_ih: ParamTensor::new(
                &format!("{name}.w_ih"),
                recurrent_uniform(rng, n_in, 3 * hidden, hidden).into_dyn(),
            ),
            w_hh: ParamTensor::new(
                &format!("{name}.w_hh"),
                recurrent_uniform(rng, hidden, 3 * hidden, hidden).into_dyn(),
            ),
            b_ih: ParamTensor::zeros(&format!("{name}.b_ih"), &[3 * hidden]),
            b_hh: ParamTensor::zeros(&format!("{name}.b_hh"), &[3 * hidden]),
            n_in,
            hidden,
        }
    }

    pub fn zero_state(&self, batch: usize) -> Mat {
        Array2::zeros((batch, self.hidden))
    }

    fn gates(&self, x: &Mat, h_prev: &Mat) -> (Mat, Mat) {
        let mut gi = x.dot(&self.w_ih.as2());
        add_bias(&mut gi, &self.b_ih.as1());
        let mut gh = h_prev.dot(&self.w_hh.as2());
        add_bias(&mut gh, &self.b_hh.as1());
        (gi, gh)
    }

    /// One step over a batch; returns the new hidden state and the cache.
    pub fn step(&self, x: &Mat, h_prev: &Mat) -> (Mat, GruCache) {
        let h = self.hidden;
        let (gi, gh) = self.gates(x, h_prev);

        let mut r = gi.slice(s![.., 0..h]).to_owned();
        r += &gh.slice(s![.., 0..h]);
        r.mapv_inplace(sigmoid);

        let mut z = gi.slice(s![.., h..2 * h]).to_owned();
        z += &gh.slice(s![.., h..2 * h]);
        z.mapv_inplace(sigmoid);

        let gh_n = gh.slice(s![.., 2 * h..3 * h]).to_owned();
        let mut n = gi.slice(s![.., 2 * h..3 * h]).to_owned();
        n += &(&r * &gh_n);
        n.mapv_inplace(f32::tanh);

        let h_new = &n + &(&z * &(h_prev - &n));
        let cache = GruCache {
            x: x.clone(),
            h_prev: h_prev.clone(),
            r,
            z,
            n,
            gh_n,
        };
        (h_new, cache)
    }

    /// Inference-only step.
    pub fn step_nocache(&self, x: &Mat, h_prev: &Mat) -> Mat {
        let h = self.hidden;
        let (gi, gh) = self.gates(x, h_prev);

        let mut r = gi.slice(s![.., 0..h]).to_owned();
        r += &gh.slice(s![.., 0..h]);
        r.mapv_inplace(sigmoid);

        let mut z = gi.slice(s![.., h..2 * h]).to_owned();
        z += &gh.slice(s![.., h..2 * h]);
        z.mapv_inplace(sigmoid);

        let mut n = gi.slice(s![.., 2 * h..3 * h]).to_owned();
        ndarray::Zip::from(&mut n)
            .and(&r)
            .and(&gh.slice(s![.., 2 * h..3 * h]))
            .for_each(|n, &r, &g| *n = (*n + r * g).tanh());

        &n + &(&z * &(h_prev - &n))
    }

    /// Accumulates parameter grads; returns (dL/dx, dL/dh_prev).
    pub fn backward_step(&mut self, cache: &GruCache, dh: &Mat) -> (Mat, Mat) {
        let h = self.hidden;
        let b = dh.nrows();

        let dz = dh * &(&cache.h_prev - &cache.n);
        let dn = dh * &cache.z.mapv(|z| 1.0 - z);
        let da_n = &dn * &cache.n.mapv(|n| 1.0 - n * n);
        let dr = &da_n * &cache.gh_n;
        let dgh_n = &da_n * &cache.r;
        let da_r = &dr * &cache.r.mapv(|r| r * (1.0 - r));
        let da_z = &dz * &cache.z.mapv(|z| z * (1.0 - z));

        let mut dgi: Mat = Array2::zeros((b, 3 * h));
        dgi.slice_mut(s![.., 0..h]).assign(&da_r);
        dgi.slice_mut(s![.., h..2 * h]).assign(&da_z);
        dgi.slice_mut(s![.., 2 * h..3 * h]).assign(&da_n);

        let mut dgh: Mat = Array2::zeros((b, 3 * h));
        dgh.slice_mut(s![.., 0..h]).assign(&da_r);
        dgh.slice_mut(s![.., h..2 * h]).assign(&da_z);
        dgh.slice_mut(s![.., 2 * h..3 * h]).assign(&dgh_n);

        general_mat_mul(1.0, &cache.x.t(), &dgi, 1.0, &mut self.w_ih.grad_as2());
        general_mat_mul(1.0, &cache.h_prev.t(), &dgh, 1.0, &mut self.w_hh.grad_as2());
        accum_bias_grad(&mut self.b_ih.grad, &dgi);
        accum_bias_grad(&mut self.b_hh.grad, &dgh);

        let dx = dgi.dot(&self.w_ih.as2().t());
        let mut dh_prev = dgh.dot(&self.w_hh.as2().t());
        dh_prev += &(dh * &cache.z);
        (dx, dh_prev)
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

    fn run_loss(g: &Gru, xs: &[Mat], h0: &Mat, cs: &[Mat]) -> f64 {
        let mut h = h0.clone();
        let mut total = 0.0f64;
        for (x, c) in xs.iter().zip(cs) {
            h = g.step_nocache(x, &h);
            total += h.iter().zip(c.iter()).map(|(&a, &b)| (a * b) as f64).sum::<f64>();
        }
        total
    }

    #[test]
    fn bptt_gradients_match_finite_differences() {
        let (n_in, hidden, batch, steps) = (3usize, 4usize, 2usize, 3usize);
        let mut rng = stream(7, "gru-test");
        let mut g = Gru::new("g", n_in, hidden, &mut rng);
        // Non-zero biases so their gradients are exercised from a generic point.
        for p in [&mut g.b_ih, &mut g.b_hh] {
            p.value.mapv_inplace(|_| 0.1);
        }
        let xs: Vec<Mat> = (0..steps)
            .map(|_| Array2::from_shape_fn((batch, n_in), |_| rng.random_range(-1.0f32..1.0)))
            .collect();
        let cs: Vec<Mat> = (0..steps)
            .map(|_| Array2::from_shape_fn((batch, hidden), |_| rng.random_range(-1.0f32..1.0)))
            .collect();
        let h0 = Array2::from_shape_fn((batch, hidden), |_| rng.random_range(-0.5f32..0.5));

        // Analytic: forward with caches, then reverse accumulation.
        let mut caches = Vec::new();
        let mut h = h0.clone();
        for x in &xs {
            let (h_new, cache) = g.step(x, &h);
            caches.push(cache);
            h = h_new;
        }
        for p in g.params_mut() {
            p.zero_grad();
        }
        let mut dh: Mat = Array2::zeros((batch, hidden));
        let mut dxs = vec![Array2::zeros((batch, n_in)); steps];
        for t in (0..steps).rev() {
            dh += &cs[t];
            let (dx, dh_prev) = g.backward_step(&caches[t], &dh);
            dxs[t] = dx;
            dh = dh_prev;
        }
        let dh0 = dh;

        let xs2 = xs.clone();
        let cs2 = cs.clone();
        let mut obj = (g.clone(), xs.clone(), h0.clone());
        let loss = move |o: &(Gru, Vec<Mat>, Mat)| run_loss(&o.0, &o.1, &o.2, &cs2);

        let fd = fd_grad_obj(&mut obj, |o| o.0.w_ih.value.as_slice_mut().unwrap(), &loss, 1e-2);
        assert_close(g.w_ih.grad.as_slice().unwrap(), &fd, "dW_ih");
        let fd = fd_grad_obj(&mut obj, |o| o.0.w_hh.value.as_slice_mut().unwrap(), &loss, 1e-2);
        assert_close(g.w_hh.grad.as_slice().unwrap(), &fd, "dW_hh");
        let fd = fd_grad_obj(&mut obj, |o| o.0.b_ih.value.as_slice_mut().unwrap(), &loss, 1e-2);
        assert_close(g.b_ih.grad.as_slice().unwrap(), &fd, "db_ih");
        let fd = fd_grad_obj(&mut obj, |o| o.0.b_hh.value.as_slice_mut().unwrap(), &loss, 1e-2);
        assert_close(g.b_hh.grad.as_slice().unwrap(), &fd, "db_hh");
        let fd = fd_grad_obj(&mut obj, |o| o.1[0].as_slice_mut().unwrap(), &loss, 1e-2);
        assert_close(dxs[0].as_slice().unwrap(), &fd, "dx0");
        let fd = fd_grad_obj(&mut obj, |o| o.2.as_slice_mut().unwrap(), &loss, 1e-2);
        assert_close(dh0.as_slice().unwrap(), &fd, "dh0");

        let _ = xs2;
    }

    #[test]
    fn cached_and_nocache_steps_agree() {
        let mut rng = stream(9, "gru-test2");
        let g = Gru::new("g", 5, 6, &mut rng);
        let x = Array2::from_shape_fn((3, 5), |_| rng.random_range(-1.0f32..1.0));
        let h0 = g.zero_state(3);
        let (h1, _) = g.step(&x, &h0);
        let h1b = g.step_nocache(&x, &h0);
        assert_eq!(h1, h1b);
    }
}
