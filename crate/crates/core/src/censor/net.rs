//! The three neural censors. All consume the normalized fixed-length
//! (size, delay) representation and produce one logit per flow; scores
//! are the sigmoid of that logit, with benign near 1.

use crate::io::Tensor;
use crate::nn::{
    bce_with_logits_loss, mse_loss, Adam, Conv1d, Linear, Lstm, Mat, MaxPool1d,
    ParamTensor,
};
use crate::rng::{stream, Rng};
use crate::{Error, Result};
use ndarray::{Array1, Array2, Array3};
use rand::seq::SliceRandom;
use rand::Rng as _;

#[derive(Debug, Clone)]
pub struct NetTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    /// Reconstruction epochs per autoencoder stage.
    pub pretrain_epochs: usize,
    /// Masking-noise probability for denoising pretraining.
    pub noise: f64,
}

impl Default for NetTrainConfig {
    fn default() -> Self {
        NetTrainConfig { epochs: 30, batch_size: 32, lr: 1e-3, pretrain_epochs: 15, noise: 0.2 }
    }
}

/// Interleaves fixed-length (size, delay) pairs into batch rows.
pub(crate) fn batch_vecs(inputs: &[Vec<(f32, f32)>], idx: &[usize]) -> Mat {
    let d = inputs[idx[0]].len() * 2;
    let mut x = Array2::zeros((idx.len(), d));
    for (r, &i) in idx.iter().enumerate() {
        for (j, &(s, t)) in inputs[i].iter().enumerate() {
            x[[r, 2 * j]] = s;
            x[[r, 2 * j + 1]] = t;
        }
    }
    x
}

/// Channel layout: [batch, {sizes, delays}, length].
pub(crate) fn batch_channels(inputs: &[Vec<(f32, f32)>], idx: &[usize]) -> Array3<f32> {
    let len = inputs[idx[0]].len();
    let mut x = Array3::zeros((idx.len(), 2, len));
    for (r, &i) in idx.iter().enumerate() {
        for (j, &(s, t)) in inputs[i].iter().enumerate() {
            x[[r, 0, j]] = s;
            x[[r, 1, j]] = t;
        }
    }
    x
}

/// Per-step [batch, 2] inputs for the recurrent censor.
pub(crate) fn batch_seq(inputs: &[Vec<(f32, f32)>], idx: &[usize]) -> Vec<Mat> {
    let len = inputs[idx[0]].len();
    let mut steps = Vec::with_capacity(len);
    for j in 0..len {
        let mut x = Array2::zeros((idx.len(), 2));
        for (r, &i) in idx.iter().enumerate() {
            let (s, t) = inputs[i][j];
            x[[r, 0]] = s;
            x[[r, 1]] = t;
        }
        steps.push(x);
    }
    steps
}

fn batch_labels(labels: &[f32], idx: &[usize]) -> Array1<f32> {
    Array1::from_iter(idx.iter().map(|&i| labels[i]))
}

fn epoch_batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(|c| c.to_vec()).collect()
}

fn find_tensor<'a>(tensors: &'a [Tensor], name: &str) -> Result<&'a Tensor> {
    tensors
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))
}

fn load_params(params: Vec<&mut ParamTensor>, tensors: &[Tensor]) -> Result<()> {
    for p in params {
        p.load_tensor(find_tensor(tensors, &p.name)?)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Denoising-autoencoder censor: dense 2f*L -> 512 -> 128, each stage
// pretrained to reconstruct its clean input from a masked copy, then the
// stack is fine-tuned with a 1-logit head.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SdaeNet {
    pub enc1: Linear,
    pub enc2: Linear,
    pub head: Linear,
}

fn relu(mut y: Mat) -> Mat {
    y.mapv_inplace(|v| v.max(0.0));
    y
}

fn relu_back(post: &Mat, dpost: &Mat) -> Mat {
    let mut d = dpost.clone();
    ndarray::Zip::from(&mut d).and(post).for_each(|d, &y| {
        if y <= 0.0 {
            *d = 0.0;
        }
    });
    d
}

fn mask_noise(x: &Mat, p: f64, rng: &mut Rng) -> Mat {
    let mut out = x.clone();
    out.mapv_inplace(|v| if rng.random_bool(p) { 0.0 } else { v });
    out
}

impl SdaeNet {
    pub fn new(n_in: usize, rng: &mut Rng) -> Self {
        SdaeNet {
            enc1: Linear::new("sdae.enc1", n_in, 512, rng),
            enc2: Linear::new("sdae.enc2", 512, 128, rng),
            head: Linear::new("sdae.head", 128, 1, rng),
        }
    }

    pub fn logits(&self, x: &Mat) -> Array1<f32> {
        let h1 = relu(self.enc1.forward(x));
        let h2 = relu(self.enc2.forward(&h1));
        let out = self.head.forward(&h2);
        out.column(0).to_owned()
    }

    pub fn train(
        inputs: &[Vec<(f32, f32)>],
        labels: &[f32],
        cfg: &NetTrainConfig,
        seed: u64,
    ) -> SdaeNet {
        let n_in = inputs[0].len() * 2;
        let mut init_rng = stream(seed, "sdae-init");
        let mut net = SdaeNet::new(n_in, &mut init_rng);
        let mut dec1 = Linear::new("sdae.dec1", 512, n_in, &mut init_rng);
        let mut dec2 = Linear::new("sdae.dec2", 128, 512, &mut init_rng);
        let mut rng = stream(seed, "sdae-train");
        let n = inputs.len();

        // Stage 1: reconstruct the raw vector from a masked copy.
        let mut opt = Adam::new(cfg.lr);
        for _ in 0..cfg.pretrain_epochs {
            for idx in epoch_batches(n, cfg.batch_size, &mut rng) {
                let x = batch_vecs(inputs, &idx);
                let noisy = mask_noise(&x, cfg.noise, &mut rng);
                let h = relu(net.enc1.forward(&noisy));
                let recon = dec1.forward(&h);
                let (_, dr) = mse_loss(&recon, &x);
                for p in net.enc1.params_mut().into_iter().chain(dec1.params_mut()) {
                    p.zero_grad();
                }
                let dh = dec1.backward(&h, &dr);
                let dpre = relu_back(&h, &dh);
                net.enc1.backward(&noisy, &dpre);
                let mut params = net.enc1.params_mut();
                params.extend(dec1.params_mut());
                opt.step(&mut params);
            }
        }

        // Stage 2: reconstruct the first code from a masked copy.
        let mut opt = Adam::new(cfg.lr);
        for _ in 0..cfg.pretrain_epochs {
            for idx in epoch_batches(n, cfg.batch_size, &mut rng) {
                let x = batch_vecs(inputs, &idx);
                let h1 = relu(net.enc1.forward(&x));
                let noisy = mask_noise(&h1, cfg.noise, &mut rng);
                let h2 = relu(net.enc2.forward(&noisy));
                let recon = dec2.forward(&h2);
                let (_, dr) = mse_loss(&recon, &h1);
                for p in net.enc2.params_mut().into_iter().chain(dec2.params_mut()) {
                    p.zero_grad();
                }
                let dh2 = dec2.backward(&h2, &dr);
                let dpre = relu_back(&h2, &dh2);
                net.enc2.backward(&noisy, &dpre);
                let mut params = net.enc2.params_mut();
                params.extend(dec2.params_mut());
                opt.step(&mut params);
            }
        }

        // Fine-tune the whole stack on labels.
        let mut opt = Adam::new(cfg.lr);
        for _ in 0..cfg.epochs {
            for idx in epoch_batches(n, cfg.batch_size, &mut rng) {
                let x = batch_vecs(inputs, &idx);
                let y = batch_labels(labels, &idx);
                let h1 = relu(net.enc1.forward(&x));
                let h2 = relu(net.enc2.forward(&h1));
                let out = net.head.forward(&h2);
                let logits = out.column(0).to_owned();
                let (_, dlogit) = bce_with_logits_loss(&logits, &y);
                let dout = dlogit.insert_axis(ndarray::Axis(1));
                for p in net.params_mut() {
                    p.zero_grad();
                }
                let dh2 = net.head.backward(&h2, &dout);
                let dh2 = relu_back(&h2, &dh2);
                let dh1 = net.enc2.backward(&h1, &dh2);
                let dh1 = relu_back(&h1, &dh1);
                net.enc1.backward(&x, &dh1);
                opt.step(&mut net.params_mut());
            }
        }
        net
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v = self.enc1.params_mut();
        v.extend(self.enc2.params_mut());
        v.extend(self.head.params_mut());
        v
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        let mut v = self.enc1.params();
        v.extend(self.enc2.params());
        v.extend(self.head.params());
        v
    }

    pub fn from_tensors(n_in: usize, tensors: &[Tensor]) -> Result<SdaeNet> {
        let mut rng = stream(0, "sdae-load");
        let mut net = SdaeNet::new(n_in, &mut rng);
        load_params(net.params_mut(), tensors)?;
        Ok(net)
    }
}

// ---------------------------------------------------------------------------
// Convolutional censor: three conv+pool blocks over the two input
// channels, then two dense layers.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct DfNet {
    pub conv1: Conv1d,
    pub conv2: Conv1d,
    pub conv3: Conv1d,
    pub fc1: Linear,
    pub fc2: Linear,
    len_after: usize,
}

fn relu3(mut y: Array3<f32>) -> Array3<f32> {
    y.mapv_inplace(|v| v.max(0.0));
    y
}

fn relu3_back(post: &Array3<f32>, dpost: &Array3<f32>) -> Array3<f32> {
    let mut d = dpost.clone();
    ndarray::Zip::from(&mut d).and(post).for_each(|d, &y| {
        if y <= 0.0 {
            *d = 0.0;
        }
    });
    d
}

fn flatten3(x: &Array3<f32>) -> Mat {
    let (b, c, l) = x.dim();
    let mut out = Array2::zeros((b, c * l));
    for bi in 0..b {
        for ci in 0..c {
            for li in 0..l {
                out[[bi, ci * l + li]] = x[[bi, ci, li]];
            }
        }
    }
    out
}

fn unflatten3(x: &Mat, c: usize, l: usize) -> Array3<f32> {
    let b = x.nrows();
    let mut out = Array3::zeros((b, c, l));
    for bi in 0..b {
        for ci in 0..c {
            for li in 0..l {
                out[[bi, ci, li]] = x[[bi, ci * l + li]];
            }
        }
    }
    out
}

impl DfNet {
    pub fn new(fixed_len: usize, rng: &mut Rng) -> Self {
        let len_after = fixed_len / 2 / 2 / 2;
        DfNet {
            conv1: Conv1d::new("df.conv1", 2, 32, 8, rng),
            conv2: Conv1d::new("df.conv2", 32, 64, 8, rng),
            conv3: Conv1d::new("df.conv3", 64, 128, 8, rng),
            fc1: Linear::new("df.fc1", 128 * len_after, 128, rng),
            fc2: Linear::new("df.fc2", 128, 1, rng),
            len_after,
        }
    }

    pub fn logits(&self, x: &Array3<f32>) -> Array1<f32> {
        let mut h = x.clone();
        for conv in [&self.conv1, &self.conv2, &self.conv3] {
            h = relu3(conv.forward(&h));
            let (p, _) = MaxPool1d.forward(&h);
            h = p;
        }
        let flat = flatten3(&h);
        let h1 = relu(self.fc1.forward(&flat));
        self.fc2.forward(&h1).column(0).to_owned()
    }

    pub fn train(
        inputs: &[Vec<(f32, f32)>],
        labels: &[f32],
        cfg: &NetTrainConfig,
        seed: u64,
    ) -> DfNet {
        let fixed_len = inputs[0].len();
        let mut init_rng = stream(seed, "df-init");
        let mut net = DfNet::new(fixed_len, &mut init_rng);
        let mut rng = stream(seed, "df-train");
        let mut opt = Adam::new(cfg.lr);
        for _ in 0..cfg.epochs {
            for idx in epoch_batches(inputs.len(), cfg.batch_size, &mut rng) {
                let x = batch_channels(inputs, &idx);
                let y = batch_labels(labels, &idx);

                let (c1, k1) = net.conv1.forward_cached(&x);
                let a1 = relu3(c1);
                let (p1, m1) = MaxPool1d.forward(&a1);
                let (c2, k2) = net.conv2.forward_cached(&p1);
                let a2 = relu3(c2);
                let (p2, m2) = MaxPool1d.forward(&a2);
                let (c3, k3) = net.conv3.forward_cached(&p2);
                let a3 = relu3(c3);
                let (p3, m3) = MaxPool1d.forward(&a3);
                let flat = flatten3(&p3);
                let h1 = relu(net.fc1.forward(&flat));
                let out = net.fc2.forward(&h1);
                let logits = out.column(0).to_owned();
                let (_, dlogit) = bce_with_logits_loss(&logits, &y);

                for p in net.params_mut() {
                    p.zero_grad();
                }
                let dout = dlogit.insert_axis(ndarray::Axis(1));
                let dh1 = net.fc2.backward(&h1, &dout);
                let dh1 = relu_back(&h1, &dh1);
                let dflat = net.fc1.backward(&flat, &dh1);
                let dp3 = unflatten3(&dflat, 128, net.len_after);
                let da3 = MaxPool1d.backward(&m3, &dp3);
                let dc3 = relu3_back(&a3, &da3);
                let dp2 = net.conv3.backward(&k3, &dc3);
                let da2 = MaxPool1d.backward(&m2, &dp2);
                let dc2 = relu3_back(&a2, &da2);
                let dp1 = net.conv2.backward(&k2, &dc2);
                let da1 = MaxPool1d.backward(&m1, &dp1);
                let dc1 = relu3_back(&a1, &da1);
                net.conv1.backward(&k1, &dc1);
                opt.step(&mut net.params_mut());
            }
        }
        net
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v = self.conv1.params_mut();
        v.extend(self.conv2.params_mut());
        v.extend(self.conv3.params_mut());
        v.extend(self.fc1.params_mut());
        v.extend(self.fc2.params_mut());
        v
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        let mut v = self.conv1.params();
        v.extend(self.conv2.params());
        v.extend(self.conv3.params());
        v.extend(self.fc1.params());
        v.extend(self.fc2.params());
        v
    }

    pub fn from_tensors(fixed_len: usize, tensors: &[Tensor]) -> Result<DfNet> {
        let mut rng = stream(0, "df-load");
        let mut net = DfNet::new(fixed_len, &mut rng);
        load_params(net.params_mut(), tensors)?;
        Ok(net)
    }
}

// ---------------------------------------------------------------------------
// Recurrent censor: two stacked LSTM layers; the final top-layer state
// feeds the logit head.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LstmNet {
    pub l1: Lstm,
    pub l2: Lstm,
    pub head: Linear,
}

impl LstmNet {
    pub fn new(rng: &mut Rng) -> Self {
        LstmNet {
            l1: Lstm::new("lstm.l1", 2, 128, rng),
            l2: Lstm::new("lstm.l2", 128, 128, rng),
            head: Linear::new("lstm.head", 128, 1, rng),
        }
    }

    pub fn logits(&self, steps: &[Mat]) -> Array1<f32> {
        let b = steps[0].nrows();
        let (mut h1, mut c1) = self.l1.zero_state(b);
        let (mut h2, mut c2) = self.l2.zero_state(b);
        for x in steps {
            let (nh1, nc1) = self.l1.step_nocache(x, &h1, &c1);
            h1 = nh1;
            c1 = nc1;
            let (nh2, nc2) = self.l2.step_nocache(&h1, &h2, &c2);
            h2 = nh2;
            c2 = nc2;
        }
        self.head.forward(&h2).column(0).to_owned()
    }

    pub fn train(
        inputs: &[Vec<(f32, f32)>],
        labels: &[f32],
        cfg: &NetTrainConfig,
        seed: u64,
    ) -> LstmNet {
        let mut init_rng = stream(seed, "lstm-init");
        let mut net = LstmNet::new(&mut init_rng);
        let mut rng = stream(seed, "lstm-train");
        let mut opt = Adam::new(cfg.lr);
        for _ in 0..cfg.epochs {
            for idx in epoch_batches(inputs.len(), cfg.batch_size, &mut rng) {
                let steps = batch_seq(inputs, &idx);
                let y = batch_labels(labels, &idx);
                let b = idx.len();

                let (mut h1, mut c1) = net.l1.zero_state(b);
                let (mut h2, mut c2) = net.l2.zero_state(b);
                let mut caches1 = Vec::with_capacity(steps.len());
                let mut caches2 = Vec::with_capacity(steps.len());
                for x in &steps {
                    let (nh1, nc1, k1) = net.l1.step(x, &h1, &c1);
                    h1 = nh1;
                    c1 = nc1;
                    caches1.push(k1);
                    let (nh2, nc2, k2) = net.l2.step(&h1, &h2, &c2);
                    h2 = nh2;
                    c2 = nc2;
                    caches2.push(k2);
                }
                let out = net.head.forward(&h2);
                let logits = out.column(0).to_owned();
                let (_, dlogit) = bce_with_logits_loss(&logits, &y);

                for p in net.params_mut() {
                    p.zero_grad();
                }
                let dout = dlogit.insert_axis(ndarray::Axis(1));
                let mut dh2 = net.head.backward(&h2, &dout);
                let mut dc2: Mat = Array2::zeros((b, 128));
                let mut dh1: Mat = Array2::zeros((b, 128));
                let mut dc1: Mat = Array2::zeros((b, 128));
                for t in (0..steps.len()).rev() {
                    let (dx2, dh2p, dc2p) = net.l2.backward_step(&caches2[t], &dh2, &dc2);
                    let dh1_total = &dh1 + &dx2;
                    let (_, dh1p, dc1p) = net.l1.backward_step(&caches1[t], &dh1_total, &dc1);
                    dh2 = dh2p;
                    dc2 = dc2p;
                    dh1 = dh1p;
                    dc1 = dc1p;
                }
                opt.step(&mut net.params_mut());
            }
        }
        net
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut v = self.l1.params_mut();
        v.extend(self.l2.params_mut());
        v.extend(self.head.params_mut());
        v
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        let mut v = self.l1.params();
        v.extend(self.l2.params());
        v.extend(self.head.params());
        v
    }

    pub fn from_tensors(tensors: &[Tensor]) -> Result<LstmNet> {
        let mut rng = stream(0, "lstm-load");
        let mut net = LstmNet::new(&mut rng);
        load_params(net.params_mut(), tensors)?;
        Ok(net)
    }
}

// Re-exported for the single-row scoring paths.
pub(crate) use {batch_channels as channels_of, batch_seq as seq_of, batch_vecs as vecs_of};
