//! Multi-layer perceptron with per-layer activations and cached
//! forward passes for backprop.

use super::{Linear, Mat, ParamTensor};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Act {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Act {
    fn apply(self, y: &mut Mat) {
        match self {
            Act::Identity => {}
            Act::Relu => y.mapv_inplace(|v| v.max(0.0)),
            Act::Tanh => y.mapv_inplace(f32::tanh),
            Act::Sigmoid => y.mapv_inplace(super::sigmoid),
        }
    }

    /// d(pre-activation) from d(post-activation), using the post value.
    fn backward(self, post: &Mat, dpost: &Mat) -> Mat {
        match self {
            Act::Identity => dpost.clone(),
            Act::Relu => {
                let mut d = dpost.clone();
                ndarray::Zip::from(&mut d).and(post).for_each(|d, &y| {
                    if y <= 0.0 {
                        *d = 0.0;
                    }
                });
                d
            }
            Act::Tanh => {
                let mut d = dpost.clone();
                ndarray::Zip::from(&mut d).and(post).for_each(|d, &y| *d *= 1.0 - y * y);
                d
            }
            Act::Sigmoid => {
                let mut d = dpost.clone();
                ndarray::Zip::from(&mut d).and(post).for_each(|d, &y| *d *= y * (1.0 - y));
                d
            }
        }
    }
}

/// Activations of one forward pass, kept for the backward pass.
#[derive(Debug)]
pub struct MlpCache {
    /// Input to each layer (index 0 = network input), then final output.
    acts: Vec<Mat>,
}

impl MlpCache {
    pub fn output(&self) -> &Mat {
        self.acts.last().expect("non-empty cache")
    }
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    acts: Vec<Act>,
}

impl Mlp {
    /// `dims` = [in, h1, ..., out]; hidden layers use `hidden`, the last
    /// layer uses `output`.
    pub fn new(name: &str, dims: &[usize], hidden: Act, output: Act, rng: &mut Rng) -> Self {
        assert!(dims.len() >= 2);
        let mut layers = Vec::new();
        let mut acts = Vec::new();
        for i in 0..dims.len() - 1 {
            layers.push(Linear::new(&format!("{name}{i}"), dims[i], dims[i + 1], rng));
            acts.push(if i + 2 == dims.len() { output } else { hidden });
        }
        Mlp { layers, acts }
    }

    pub fn forward(&self, x: &Mat) -> Mat {
        let mut cur = x.clone();
        for (layer, act) in self.layers.iter().zip(&self.acts) {
            let mut y = layer.forward(&cur);
            act.apply(&mut y);
            cur = y;
        }
        cur
    }

    pub fn forward_cached(&self, x: &Mat) -> MlpCache {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for (layer, act) in self.layers.iter().zip(&self.acts) {
            let mut y = layer.forward(acts.last().unwrap());
            act.apply(&mut y);
            acts.push(y);
        }
        MlpCache { acts }
    }

    /// Accumulates parameter grads; returns dL/dx.
    pub fn backward(&mut self, cache: &MlpCache, dout: &Mat) -> Mat {
        let mut d = dout.clone();
        for i in (0..self.layers.len()).rev() {
            let post = &cache.acts[i + 1];
            let dpre = self.acts[i].backward(post, &d);
            d = self.layers[i].backward(&cache.acts[i], &dpre);
        }
        d
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}
