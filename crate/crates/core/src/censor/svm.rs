//! Soft-margin RBF-kernel support-vector classifier trained with a
//! simplified sequential-minimal-optimization loop. Small datasets only:
//! the full kernel matrix is materialized.

use crate::rng::stream;
use ndarray::Array2;
use rand::Rng as _;

#[derive(Debug, Clone)]
pub struct SvmConfig {
    pub c: f64,
    pub tol: f64,
    /// Consecutive full sweeps without an alpha update before stopping.
    pub max_passes: usize,
    /// Hard cap on full sweeps.
    pub max_sweeps: usize,
}

impl Default for SvmConfig {
    fn default() -> Self {
        SvmConfig { c: 1.0, tol: 1e-3, max_passes: 5, max_sweeps: 200 }
    }
}

#[derive(Debug, Clone)]
pub struct SvmModel {
    /// Support vectors, one per row.
    pub sv: Array2<f32>,
    /// alpha_i * y_i per support vector.
    pub coef: Vec<f64>,
    pub bias: f64,
    pub gamma: f64,
}

fn rbf(a: &[f32], b: &[f32], gamma: f64) -> f64 {
    let mut sq = 0.0f64;
    for (&x, &z) in a.iter().zip(b) {
        let d = (x - z) as f64;
        sq += d * d;
    }
    (-gamma * sq).exp()
}

/// 1 / (d * var(X)), the scale heuristic; falls back to 1/d for
/// constant inputs.
pub fn gamma_scale(x: &Array2<f32>) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = x.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
    if var > 1e-12 {
        1.0 / (x.ncols() as f64 * var)
    } else {
        1.0 / x.ncols() as f64
    }
}

impl SvmModel {
    /// `y` in {-1, +1} (+1 = benign). Deterministic under `seed`.
    pub fn fit(x: &Array2<f32>, y: &[f64], cfg: &SvmConfig, seed: u64) -> SvmModel {
        let n = y.len();
        assert_eq!(x.nrows(), n);
        let gamma = gamma_scale(x);
        // Full kernel matrix: fine for the hundreds-of-flows scale.
        let mut k = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let v = rbf(x.row(i).as_slice().unwrap(), x.row(j).as_slice().unwrap(), gamma);
                k[[i, j]] = v;
                k[[j, i]] = v;
            }
        }

        let mut alpha = vec![0.0f64; n];
        let mut b = 0.0f64;
        let f = |alpha: &[f64], b: f64, i: usize, k: &Array2<f64>| -> f64 {
            let mut s = b;
            for j in 0..n {
                if alpha[j] != 0.0 {
                    s += alpha[j] * y[j] * k[[j, i]];
                }
            }
            s
        };

        let mut rng = stream(seed, "svm-smo");
        let mut passes = 0usize;
        let mut sweeps = 0usize;
        while passes < cfg.max_passes && sweeps < cfg.max_sweeps {
            sweeps += 1;
            let mut changed = 0usize;
            for i in 0..n {
                let ei = f(&alpha, b, i, &k) - y[i];
                if !((y[i] * ei < -cfg.tol && alpha[i] < cfg.c)
                    || (y[i] * ei > cfg.tol && alpha[i] > 0.0))
                {
                    continue;
                }
                let mut j = rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                let ej = f(&alpha, b, j, &k) - y[j];
                let (ai_old, aj_old) = (alpha[i], alpha[j]);
                let (lo, hi) = if y[i] != y[j] {
                    ((aj_old - ai_old).max(0.0), (cfg.c + aj_old - ai_old).min(cfg.c))
                } else {
                    ((ai_old + aj_old - cfg.c).max(0.0), (ai_old + aj_old).min(cfg.c))
                };
                if lo >= hi {
                    continue;
                }
                let eta = 2.0 * k[[i, j]] - k[[i, i]] - k[[j, j]];
                if eta >= 0.0 {
                    continue;
                }
                let mut aj = aj_old - y[j] * (ei - ej) / eta;
                aj = aj.clamp(lo, hi);
                if (aj - aj_old).abs() < 1e-5 {
                    continue;
                }
                let ai = ai_old + y[i] * y[j] * (aj_old - aj);
                alpha[i] = ai;
                alpha[j] = aj;
                let b1 = b - ei - y[i] * (ai - ai_old) * k[[i, i]] - y[j] * (aj - aj_old) * k[[i, j]];
                let b2 = b - ej - y[i] * (ai - ai_old) * k[[i, j]] - y[j] * (aj - aj_old) * k[[j, j]];
                b = if ai > 0.0 && ai < cfg.c {
                    b1
                } else if aj > 0.0 && aj < cfg.c {
                    b2
                } else {
                    (b1 + b2) * 0.5
                };
                changed += 1;
            }
            if changed == 0 {
                passes += 1;
            } else {
                passes = 0;
            }
        }

        let keep: Vec<usize> = (0..n).filter(|&i| alpha[i] > 1e-8).collect();
        let mut sv = Array2::zeros((keep.len(), x.ncols()));
        let mut coef = Vec::with_capacity(keep.len());
        for (row, &i) in keep.iter().enumerate() {
            sv.row_mut(row).assign(&x.row(i));
            // Coefficients are quantized to f32 so checkpoints round-trip
            // without changing any score.
            coef.push((alpha[i] * y[i]) as f32 as f64);
        }
        SvmModel { sv, coef, bias: b, gamma }
    }

    /// Signed decision value; positive = benign side.
    pub fn decision(&self, row: &[f32]) -> f64 {
        let mut s = self.bias;
        for (i, c) in self.coef.iter().enumerate() {
            s += c * rbf(self.sv.row(i).as_slice().unwrap(), row, self.gamma);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> (Array2<f32>, Vec<f64>) {
        // Two well-separated clusters in 2-d.
        let pts = [
            (0.0, 0.1, -1.0),
            (0.1, 0.0, -1.0),
            (0.2, 0.2, -1.0),
            (0.0, 0.3, -1.0),
            (0.1, 0.2, -1.0),
            (1.0, 0.9, 1.0),
            (0.9, 1.0, 1.0),
            (0.8, 0.8, 1.0),
            (1.0, 0.7, 1.0),
            (0.9, 0.8, 1.0),
        ];
        let mut x = Array2::zeros((pts.len(), 2));
        let mut y = Vec::new();
        for (i, &(a, b, l)) in pts.iter().enumerate() {
            x[[i, 0]] = a;
            x[[i, 1]] = b;
            y.push(l);
        }
        (x, y)
    }

    #[test]
    fn separable_blobs_classify_perfectly() {
        let (x, y) = blobs();
        let m = SvmModel::fit(&x, &y, &SvmConfig::default(), 7);
        for i in 0..y.len() {
            let d = m.decision(x.row(i).as_slice().unwrap());
            assert!(d * y[i] > 0.0, "row {i}: decision {d} label {}", y[i]);
        }
        assert!(!m.coef.is_empty());
    }

    #[test]
    fn training_is_seed_deterministic() {
        let (x, y) = blobs();
        let a = SvmModel::fit(&x, &y, &SvmConfig::default(), 3);
        let b = SvmModel::fit(&x, &y, &SvmConfig::default(), 3);
        assert_eq!(a.coef, b.coef);
        assert_eq!(a.bias, b.bias);
    }

    #[test]
    fn gamma_matches_hand_computation() {
        let x = Array2::from_shape_vec((2, 2), vec![0.0, 2.0, 0.0, 2.0]).unwrap();
        // mean 1, var 1, d=2 -> gamma 0.5
        assert!((gamma_scale(&x) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rbf_kernel_is_one_at_zero_distance() {
        assert!((rbf(&[1.0, 2.0], &[1.0, 2.0], 0.7) - 1.0).abs() < 1e-12);
        assert!(rbf(&[0.0], &[10.0], 0.7) < 1e-12);
    }
}
