//! Minimal neural-network substrate: f32 tensors over ndarray, explicit
//! hand-derived backprop per layer, and an Adam optimizer. Single
//! threaded and allocation-conscious; determinism comes from seeded
//! initialization and a fixed order of operations.

mod conv;
mod gru;
mod linear;
mod lstm;
mod mlp;

pub use conv::{Conv1d, MaxPool1d};
pub use gru::{Gru, GruCache};
pub use linear::Linear;
pub use lstm::{Lstm, LstmCache};
pub use mlp::{Act, Mlp, MlpCache};

use crate::io::Tensor;
use crate::rng::Rng;
use crate::{Error, Result};
use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::Rng as _;

pub type Mat = Array2<f32>;

/// One learnable tensor: value, gradient accumulator and Adam moments.
#[derive(Debug, Clone)]
pub struct ParamTensor {
    pub name: String,
    pub value: ArrayD<f32>,
    pub grad: ArrayD<f32>,
    m: ArrayD<f32>,
    v: ArrayD<f32>,
}

impl ParamTensor {
    pub fn new(name: &str, value: ArrayD<f32>) -> Self {
        let zeros = ArrayD::zeros(value.raw_dim());
        ParamTensor {
            name: name.to_string(),
            grad: zeros.clone(),
            m: zeros.clone(),
            v: zeros,
            value,
        }
    }

    pub fn zeros(name: &str, shape: &[usize]) -> Self {
        ParamTensor::new(name, ArrayD::zeros(IxDyn(shape)))
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn as2(&self) -> ndarray::ArrayView2<'_, f32> {
        self.value.view().into_dimensionality().expect("2-d param")
    }

    pub fn as1(&self) -> ndarray::ArrayView1<'_, f32> {
        self.value.view().into_dimensionality().expect("1-d param")
    }

    pub fn grad_as2(&mut self) -> ndarray::ArrayViewMut2<'_, f32> {
        self.grad.view_mut().into_dimensionality().expect("2-d param")
    }

    pub fn grad_as1(&mut self) -> ndarray::ArrayViewMut1<'_, f32> {
        self.grad.view_mut().into_dimensionality().expect("1-d param")
    }

    /// Snapshot for a checkpoint file.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&self.name, self.value.shape().to_vec(), self.value.iter().copied().collect())
    }

    /// Restores the value (moments reset); shape must match.
    pub fn load_tensor(&mut self, t: &Tensor) -> Result<()> {
        if t.shape != self.value.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {}: shape {:?} != expected {:?}",
                t.name, t.shape, self.value.shape()
            )));
        }
        self.value = ArrayD::from_shape_vec(IxDyn(&t.shape), t.data.clone())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        self.grad.fill(0.0);
        self.m.fill(0.0);
        self.v.fill(0.0);
        Ok(())
    }
}

/// Adam with bias correction; one instance per trained network.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    t: u64,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0 }
    }

    pub fn step(&mut self, params: &mut [&mut ParamTensor]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for p in params.iter_mut() {
            let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.eps, self.lr);
            ndarray::Zip::from(&mut p.m).and(&p.grad).for_each(|m, &g| *m = b1 * *m + (1.0 - b1) * g);
            ndarray::Zip::from(&mut p.v).and(&p.grad).for_each(|v, &g| *v = b2 * *v + (1.0 - b2) * g * g);
            ndarray::Zip::from(&mut p.value)
                .and(&p.m)
                .and(&p.v)
                .for_each(|w, &m, &v| {
                    let mhat = m / b1t;
                    let vhat = v / b2t;
                    *w -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}

/// Scales gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_grad_norm(params: &mut [&mut ParamTensor], max_norm: f32) -> f32 {
    let mut sq = 0.0f64;
    for p in params.iter() {
        sq += p.grad.iter().map(|&g| (g as f64) * (g as f64)).sum::<f64>();
    }
    let norm = sq.sqrt() as f32;
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for p in params.iter_mut() {
            p.grad.mapv_inplace(|g| g * scale);
        }
    }
    norm
}

/// Xavier/Glorot uniform init for a [fan_in, fan_out] matrix.
pub fn xavier_uniform(rng: &mut Rng, fan_in: usize, fan_out: usize) -> Mat {
    let limit = (6.0 / (fan_in + fan_out) as f32).sqrt();
    Mat::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-limit..limit))
}

/// PyTorch-style recurrent init: uniform(-1/sqrt(h), 1/sqrt(h)).
pub fn recurrent_uniform(rng: &mut Rng, rows: usize, cols: usize, h: usize) -> Mat {
    let limit = 1.0 / (h as f32).sqrt();
    Mat::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit))
}

pub fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// y += row broadcast over the batch axis.
pub fn add_bias(y: &mut Mat, b: &ndarray::ArrayView1<f32>) {
    for mut row in y.rows_mut() {
        row += b;
    }
}

/// db += column sums of dy.
pub fn accum_bias_grad(db: &mut ArrayD<f32>, dy: &Mat) {
    let mut db1 = db.view_mut().into_dimensionality::<ndarray::Ix1>().expect("1-d bias");
    for row in dy.rows() {
        db1 += &row;
    }
}

/// Mean-squared-error loss and its input gradient (mean over all elements).
pub fn mse_loss(pred: &Mat, target: &Mat) -> (f64, Mat) {
    let n = pred.len() as f64;
    let mut grad = pred - target;
    let loss = grad.iter().map(|&d| (d as f64) * (d as f64)).sum::<f64>() / n;
    grad.mapv_inplace(|d| d * (2.0 / n as f32));
    (loss, grad)
}

/// Mean-absolute-error loss and (sub)gradient.
pub fn mae_loss(pred: &Mat, target: &Mat) -> (f64, Mat) {
    let n = pred.len() as f64;
    let diff = pred - target;
    let loss = diff.iter().map(|&d| (d as f64).abs()).sum::<f64>() / n;
    let grad = diff.mapv(|d| d.signum() / n as f32);
    (loss, grad)
}

/// Numerically stable binary cross-entropy on logits.
/// Returns (mean loss, dloss/dlogit).
pub fn bce_with_logits_loss(logits: &Array1<f32>, targets: &Array1<f32>) -> (f64, Array1<f32>) {
    let n = logits.len() as f64;
    let mut loss = 0.0f64;
    let mut grad = Array1::<f32>::zeros(logits.len());
    for i in 0..logits.len() {
        let z = logits[i] as f64;
        let y = targets[i] as f64;
        loss += z.max(0.0) - z * y + (1.0 + (-z.abs()).exp()).ln();
        let p = 1.0 / (1.0 + (-z).exp());
        grad[i] = ((p - y) / n) as f32;
    }
    (loss / n, grad)
}

/// Binary cross-entropy on sigmoid scores, numerically clamped.
/// Returns (loss, dloss/dscore).
pub fn bce_loss(scores: &Array1<f32>, targets: &Array1<f32>) -> (f64, Array1<f32>) {
    let n = scores.len() as f64;
    let mut loss = 0.0f64;
    let mut grad = Array1::<f32>::zeros(scores.len());
    for i in 0..scores.len() {
        let p = scores[i].clamp(1e-6, 1.0 - 1e-6) as f64;
        let y = targets[i] as f64;
        loss += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        grad[i] = ((p - y) / (p * (1.0 - p)) / n) as f32;
    }
    (loss / n, grad)
}

#[cfg(test)]
pub(crate) mod gradcheck {
    /// Central finite difference of `loss(obj)` wrt the f32 slice that
    /// `get(obj)` exposes (a parameter or an input buffer).
    pub fn fd_grad_obj<T>(
        obj: &mut T,
        get: impl Fn(&mut T) -> &mut [f32],
        loss: impl Fn(&T) -> f64,
        h: f32,
    ) -> Vec<f32> {
        let n = get(obj).len();
        let mut g = vec![0.0f32; n];
        for i in 0..n {
            let orig = get(obj)[i];
            get(obj)[i] = orig + h;
            let lp = loss(obj);
            get(obj)[i] = orig - h;
            let lm = loss(obj);
            get(obj)[i] = orig;
            g[i] = ((lp - lm) / (2.0 * h as f64)) as f32;
        }
        g
    }

    pub fn assert_close(analytic: &[f32], numeric: &[f32], name: &str) {
        assert_eq!(analytic.len(), numeric.len(), "{name}: length mismatch");
        for (i, (&a, &n)) in analytic.iter().zip(numeric.iter()).enumerate() {
            let tol = 2e-3 + 2e-2 * a.abs().max(n.abs());
            assert!(
                (a - n).abs() <= tol,
                "{name}[{i}]: analytic {a} vs numeric {n}"
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn adam_descends_a_quadratic() {
        let mut p = ParamTensor::new("x", ArrayD::from_elem(IxDyn(&[1]), 5.0f32));
        let mut opt = Adam::new(0.1);
        for _ in 0..500 {
            let x = p.value[[0]];
            p.grad[[0]] = 2.0 * x;
            opt.step(&mut [&mut p]);
        }
        assert!(p.value[[0]].abs() < 1e-2);
    }

    #[test]
    fn grad_clip_caps_global_norm() {
        let mut a = ParamTensor::new("a", ArrayD::from_elem(IxDyn(&[2]), 0.0f32));
        let mut b = ParamTensor::new("b", ArrayD::from_elem(IxDyn(&[2]), 0.0f32));
        a.grad.fill(3.0);
        b.grad.fill(4.0);
        let norm = clip_grad_norm(&mut [&mut a, &mut b], 1.0);
        assert!((norm - 50.0f32.sqrt()).abs() < 1e-4);
        let sq: f32 = a.grad.iter().chain(b.grad.iter()).map(|g| g * g).sum();
        assert!((sq.sqrt() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn xavier_respects_limits() {
        let mut rng = stream(0, "xavier");
        let w = xavier_uniform(&mut rng, 30, 50);
        let limit = (6.0f32 / 80.0).sqrt();
        assert!(w.iter().all(|&x| x.abs() <= limit));
        assert!(w.iter().any(|&x| x.abs() > limit * 0.5));
    }

    #[test]
    fn losses_match_hand_values() {
        let pred = Mat::from_shape_vec((1, 2), vec![1.0, 2.0]).unwrap();
        let target = Mat::from_shape_vec((1, 2), vec![0.0, 0.0]).unwrap();
        let (mse, gmse) = mse_loss(&pred, &target);
        assert!((mse - 2.5).abs() < 1e-12);
        assert!((gmse[[0, 0]] - 1.0).abs() < 1e-6 && (gmse[[0, 1]] - 2.0).abs() < 1e-6);
        let (mae, _) = mae_loss(&pred, &target);
        assert!((mae - 1.5).abs() < 1e-12);
        let (bce, _) = bce_loss(
            &Array1::from_vec(vec![0.5, 0.5]),
            &Array1::from_vec(vec![1.0, 0.0]),
        );
        assert!((bce - (2.0f64.ln())).abs() < 1e-6);
    }

    #[test]
    fn bce_with_logits_matches_score_form() {
        // logit 0 -> p 0.5 -> loss ln 2; gradient p - y over n.
        let (loss, grad) = bce_with_logits_loss(
            &Array1::from_vec(vec![0.0, 0.0]),
            &Array1::from_vec(vec![1.0, 0.0]),
        );
        assert!((loss - 2.0f64.ln()).abs() < 1e-6);
        assert!((grad[0] + 0.25).abs() < 1e-6 && (grad[1] - 0.25).abs() < 1e-6);
        // Large logits stay finite.
        let (loss, _) = bce_with_logits_loss(
            &Array1::from_vec(vec![50.0, -50.0]),
            &Array1::from_vec(vec![1.0, 0.0]),
        );
        assert!(loss.is_finite() && loss < 1e-6);
    }
}
