//! The state encoder: a stacked recurrent network pretrained as the
//! encoder half of a sequence autoencoder on synthetic flows, then
//! frozen. It maps an arbitrary-length sequence of (size, delay) pairs
//! to a fixed H-dimensional code; the matching decoder exists only to
//! audit reconstruction quality.

use crate::io::{params_checksum, Tensor, TensorFile};
use crate::nn::{mae_loss, mse_loss, Adam, Gru, GruCache, Linear, Mat};
use crate::rng::{stream, Rng};
use crate::{Error, Result};
use ndarray::{Array1, Array3, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconLoss {
    Mse,
    Mae,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderPretrainConfig {
    pub h: usize,
    pub layers: usize,
    /// Longest synthetic flow; batch lengths are drawn from [1, t_max].
    pub t_max: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub loss: ReconLoss,
    /// Test-NMAE probe cadence in epochs; 0 probes only before and
    /// after training.
    pub probe_every: usize,
    pub seed: u64,
}

impl Default for EncoderPretrainConfig {
    fn default() -> Self {
        EncoderPretrainConfig {
            h: 512,
            layers: 2,
            t_max: 60,
            n_train: 12_000,
            n_test: 3_000,
            batch_size: 64,
            epochs: 10,
            lr: 5e-4,
            loss: ReconLoss::Mse,
            probe_every: 0,
            seed: 0,
        }
    }
}

impl EncoderPretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::Config("n_train and n_test must be positive".into()));
        }
        if self.h == 0 || self.layers == 0 || self.t_max == 0 || self.batch_size == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        Ok(())
    }
}

/// Synthetic flows with maximal variability: sizes uniform in (-1, 1),
/// delays uniform in [0, 1) with the first delay pinned to zero.
pub fn synthetic_flows(n: usize, t_max: usize, rng: &mut Rng) -> Array3<f32> {
    let mut data = Array3::<f32>::zeros((n, t_max, 2));
    for i in 0..n {
        for t in 0..t_max {
            data[[i, t, 0]] = rng.random_range(-1.0..1.0);
            data[[i, t, 1]] = if t == 0 { 0.0 } else { rng.random_range(0.0..1.0) };
        }
    }
    data
}

#[derive(Clone)]
pub struct StateEncoder {
    pub layers: Vec<Gru>,
    pub h: usize,
}

impl StateEncoder {
    pub fn new(h: usize, layers: usize, rng: &mut Rng) -> Self {
        let layers = (0..layers)
            .map(|l| {
                let n_in = if l == 0 { 2 } else { h };
                Gru::new(&format!("enc.l{l}"), n_in, h, rng)
            })
            .collect();
        StateEncoder { layers, h }
    }

    /// Fixed-size code of a non-empty (size, delay) sequence.
    pub fn encode(&self, seq: &[(f32, f32)]) -> Result<Vec<f32>> {
        if seq.is_empty() {
            return Err(Error::Input("cannot encode an empty sequence".into()));
        }
        let mut hs: Vec<Mat> = self.layers.iter().map(|g| g.zero_state(1)).collect();
        for &(s, d) in seq {
            let mut x = Mat::zeros((1, 2));
            x[[0, 0]] = s;
            x[[0, 1]] = d;
            for (l, gru) in self.layers.iter().enumerate() {
                let h_new = gru.step_nocache(&x, &hs[l]);
                x = h_new.clone();
                hs[l] = h_new;
            }
        }
        Ok(hs.last().unwrap().row(0).to_vec())
    }

    /// Top-layer state after each step of a batched pass: one scan
    /// yields the codes of every prefix length at once. Input is
    /// [batch, steps, 2]; element t of the result is [batch, H] and
    /// encodes prefixes of length t+1.
    pub fn prefix_codes(&self, batch: &Array3<f32>) -> Vec<Mat> {
        let (b, steps, _) = batch.dim();
        let mut hs: Vec<Mat> = self.layers.iter().map(|g| g.zero_state(b)).collect();
        let mut out = Vec::with_capacity(steps);
        for t in 0..steps {
            let mut x = batch.index_axis(Axis(1), t).to_owned();
            for (l, gru) in self.layers.iter().enumerate() {
                let h_new = gru.step_nocache(&x, &hs[l]);
                x = h_new.clone();
                hs[l] = h_new;
            }
            out.push(hs.last().unwrap().clone());
        }
        out
    }

    fn forward_cached(&self, batch: &Array3<f32>) -> (Mat, Vec<Vec<GruCache>>) {
        let (b, steps, _) = batch.dim();
        let mut hs: Vec<Mat> = self.layers.iter().map(|g| g.zero_state(b)).collect();
        let mut caches: Vec<Vec<GruCache>> = (0..self.layers.len()).map(|_| Vec::new()).collect();
        for t in 0..steps {
            let mut x = batch.index_axis(Axis(1), t).to_owned();
            for (l, gru) in self.layers.iter().enumerate() {
                let (h_new, cache) = gru.step(&x, &hs[l]);
                caches[l].push(cache);
                x = h_new.clone();
                hs[l] = h_new;
            }
        }
        (hs.last().unwrap().clone(), caches)
    }

    /// BPTT from a gradient on the final top-layer state.
    fn backward(&mut self, caches: &[Vec<GruCache>], d_code: &Mat) {
        let steps = caches[0].len();
        let n_layers = self.layers.len();
        let b = d_code.nrows();
        let mut dh_next: Vec<Mat> = self.layers.iter().map(|_| Mat::zeros((b, self.h))).collect();
        for t in (0..steps).rev() {
            let mut from_above: Option<Mat> = None;
            for l in (0..n_layers).rev() {
                let mut dh = dh_next[l].clone();
                if l == n_layers - 1 && t == steps - 1 {
                    dh += d_code;
                }
                if let Some(dx) = from_above.take() {
                    dh += &dx;
                }
                let (dx, dh_prev) = self.layers[l].backward_step(&caches[l][t], &dh);
                dh_next[l] = dh_prev;
                if l > 0 {
                    from_above = Some(dx);
                }
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut crate::nn::ParamTensor> {
        self.layers.iter_mut().flat_map(|g| g.params_mut()).collect()
    }

    pub fn params(&self) -> Vec<&crate::nn::ParamTensor> {
        self.layers.iter().flat_map(|g| g.params()).collect()
    }

    fn to_tensors(&self) -> Vec<Tensor> {
        self.params().iter().map(|p| p.to_tensor()).collect()
    }

    /// Order-stable digest of all parameters; pins the frozen-encoder
    /// contract in policy checkpoints.
    pub fn checksum(&self) -> u64 {
        params_checksum(&self.to_tensors())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = TensorFile::new(serde_json::json!({
            "kind": "state-encoder",
            "h": self.h,
            "layers": self.layers.len(),
            "input_arity": 2,
        }));
        for t in self.to_tensors() {
            file.push(t);
        }
        file.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = TensorFile::load(path)?;
        if file.meta_str("kind")? != "state-encoder" {
            return Err(Error::Checkpoint("not a state-encoder checkpoint".into()));
        }
        let h = file.meta_u64("h")? as usize;
        let n_layers = file.meta_u64("layers")? as usize;
        let mut rng = stream(0, "encoder-load-scratch");
        let mut enc = StateEncoder::new(h, n_layers, &mut rng);
        for p in enc.params_mut() {
            let name = p.name.clone();
            p.load_tensor(file.get(&name)?)?;
        }
        Ok(enc)
    }
}

pub struct StateDecoder {
    pub layers: Vec<Gru>,
    pub head: Linear,
    pub h: usize,
}

struct DecoderTrace {
    caches: Vec<Vec<GruCache>>,
    /// Top-layer state per step (input to the head).
    tops: Vec<Mat>,
    preds: Vec<Mat>,
}

impl StateDecoder {
    pub fn new(h: usize, layers: usize, rng: &mut Rng) -> Self {
        let layers = (0..layers).map(|l| Gru::new(&format!("dec.l{l}"), h, h, rng)).collect();
        StateDecoder { layers, head: Linear::new("dec.head", h, 2, rng), h }
    }

    /// Reconstructs `steps` (size, delay) pairs from a batch of codes.
    /// The code is fed as the input at every step.
    pub fn decode(&self, code: &Mat, steps: usize) -> Vec<Mat> {
        let b = code.nrows();
        let mut hs: Vec<Mat> = self.layers.iter().map(|g| g.zero_state(b)).collect();
        let mut out = Vec::with_capacity(steps);
        for _ in 0..steps {
            let mut x = code.clone();
            for (l, gru) in self.layers.iter().enumerate() {
                let h_new = gru.step_nocache(&x, &hs[l]);
                x = h_new.clone();
                hs[l] = h_new;
            }
            out.push(self.head.forward(hs.last().unwrap()));
        }
        out
    }

    fn forward_cached(&self, code: &Mat, steps: usize) -> DecoderTrace {
        let b = code.nrows();
        let mut hs: Vec<Mat> = self.layers.iter().map(|g| g.zero_state(b)).collect();
        let mut caches: Vec<Vec<GruCache>> = (0..self.layers.len()).map(|_| Vec::new()).collect();
        let mut tops = Vec::with_capacity(steps);
        let mut preds = Vec::with_capacity(steps);
        for _ in 0..steps {
            let mut x = code.clone();
            for (l, gru) in self.layers.iter().enumerate() {
                let (h_new, cache) = gru.step(&x, &hs[l]);
                caches[l].push(cache);
                x = h_new.clone();
                hs[l] = h_new;
            }
            let top = hs.last().unwrap().clone();
            preds.push(self.head.forward(&top));
            tops.push(top);
        }
        DecoderTrace { caches, tops, preds }
    }

    /// BPTT over the decoder; returns the gradient wrt the code (the
    /// sum of the per-step input gradients of the bottom layer).
    fn backward(&mut self, trace: &DecoderTrace, d_preds: &[Mat]) -> Mat {
        let steps = trace.caches[0].len();
        let n_layers = self.layers.len();
        let b = trace.tops[0].nrows();
        let mut d_code = Mat::zeros((b, self.h));
        let mut dh_next: Vec<Mat> = self.layers.iter().map(|_| Mat::zeros((b, self.h))).collect();
        for t in (0..steps).rev() {
            let mut from_above = self.head.backward(&trace.tops[t], &d_preds[t]);
            for l in (0..n_layers).rev() {
                let mut dh = dh_next[l].clone();
                dh += &from_above;
                let (dx, dh_prev) = self.layers[l].backward_step(&trace.caches[l][t], &dh);
                dh_next[l] = dh_prev;
                if l > 0 {
                    from_above = dx;
                } else {
                    d_code += &dx;
                }
            }
        }
        d_code
    }

    pub fn params_mut(&mut self) -> Vec<&mut crate::nn::ParamTensor> {
        let mut ps: Vec<_> = self.layers.iter_mut().flat_map(|g| g.params_mut()).collect();
        ps.extend(self.head.params_mut());
        ps
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = TensorFile::new(serde_json::json!({
            "kind": "state-decoder",
            "h": self.h,
            "layers": self.layers.len(),
        }));
        for p in self.layers.iter().flat_map(|g| g.params()) {
            file.push(p.to_tensor());
        }
        for p in self.head.params() {
            file.push(p.to_tensor());
        }
        file.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = TensorFile::load(path)?;
        if file.meta_str("kind")? != "state-decoder" {
            return Err(Error::Checkpoint("not a state-decoder checkpoint".into()));
        }
        let h = file.meta_u64("h")? as usize;
        let n_layers = file.meta_u64("layers")? as usize;
        let mut rng = stream(0, "decoder-load-scratch");
        let mut dec = StateDecoder::new(h, n_layers, &mut rng);
        for p in dec.params_mut() {
            let name = p.name.clone();
            p.load_tensor(file.get(&name)?)?;
        }
        Ok(dec)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PretrainReport {
    /// Mean NMAE over the probe lengths before / after training.
    pub initial_nmae: f64,
    pub final_nmae: f64,
    pub epoch_losses: Vec<f64>,
    /// (epochs completed, test NMAE) at the configured cadence.
    pub nmae_probes: Vec<(usize, f64)>,
}

/// Trains the sequence autoencoder on synthetic flows and returns the
/// frozen-ready encoder together with its decoder and a quality report.
/// Each mini-batch is truncated to a shared length drawn from [1, t_max]
/// so the encoder never specializes to one sequence length.
pub fn pretrain_encoder(
    cfg: &EncoderPretrainConfig,
) -> Result<(StateEncoder, StateDecoder, PretrainReport)> {
    pretrain_encoder_with(cfg, |_, _, _, _, _| {})
}

/// `pretrain_encoder` with a progress callback: called after every
/// epoch with (epochs completed, mean loss, probe NMAE when probed)
/// plus the current model, so callers can checkpoint or run their own
/// evaluations mid-training.
pub fn pretrain_encoder_with(
    cfg: &EncoderPretrainConfig,
    mut on_epoch: impl FnMut(usize, f64, Option<f64>, &StateEncoder, &StateDecoder),
) -> Result<(StateEncoder, StateDecoder, PretrainReport)> {
    cfg.validate()?;
    let mut init_rng = stream(cfg.seed, "encoder-init");
    let mut enc = StateEncoder::new(cfg.h, cfg.layers, &mut init_rng);
    let mut dec = StateDecoder::new(cfg.h, cfg.layers, &mut init_rng);

    let train = synthetic_flows(cfg.n_train, cfg.t_max, &mut stream(cfg.seed, "encoder-train-data"));
    let test = synthetic_flows(cfg.n_test, cfg.t_max, &mut stream(cfg.seed, "encoder-test-data"));

    // NMAE probe on a slice of the test set; the full curve is the
    // caller's business (it is quadratic in length).
    let probe_flows = test.slice(ndarray::s![..cfg.n_test.min(128), .., ..]).to_owned();
    let probe_len = cfg.t_max.min(40);
    let probe = |enc: &StateEncoder, dec: &StateDecoder| -> f64 {
        let curve = nmae_curve(enc, dec, &probe_flows, probe_len);
        curve.iter().sum::<f64>() / curve.len() as f64
    };
    let initial_nmae = probe(&enc, &dec);

    let mut order_rng = stream(cfg.seed, "encoder-order");
    let mut len_rng = stream(cfg.seed, "encoder-len");
    let mut adam = Adam::new(cfg.lr as f32);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    let mut nmae_probes = Vec::new();
    let mut order: Vec<usize> = (0..cfg.n_train).collect();
    for epoch in 0..cfg.epochs {
        // Fisher-Yates keeps the shuffle independent of batch size.
        for i in (1..order.len()).rev() {
            order.swap(i, order_rng.random_range(0..=i));
        }
        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let len = len_rng.random_range(1..=cfg.t_max);
            let mut batch = Array3::<f32>::zeros((chunk.len(), len, 2));
            for (row, &idx) in chunk.iter().enumerate() {
                batch
                    .index_axis_mut(Axis(0), row)
                    .assign(&train.slice(ndarray::s![idx, ..len, ..]));
            }

            let (code, enc_caches) = enc.forward_cached(&batch);
            let trace = dec.forward_cached(&code, len);

            // One loss call over all steps: stack predictions and
            // targets as [steps * batch, 2] blocks.
            let b = chunk.len();
            let mut pred_all = Mat::zeros((len * b, 2));
            let mut target_all = Mat::zeros((len * b, 2));
            for t in 0..len {
                pred_all.slice_mut(ndarray::s![t * b..(t + 1) * b, ..]).assign(&trace.preds[t]);
                target_all
                    .slice_mut(ndarray::s![t * b..(t + 1) * b, ..])
                    .assign(&batch.index_axis(Axis(1), t));
            }
            let (loss, grad_all) = match cfg.loss {
                ReconLoss::Mse => mse_loss(&pred_all, &target_all),
                ReconLoss::Mae => mae_loss(&pred_all, &target_all),
            };
            loss_sum += loss;
            n_batches += 1;

            let d_preds: Vec<Mat> = (0..len)
                .map(|t| grad_all.slice(ndarray::s![t * b..(t + 1) * b, ..]).to_owned())
                .collect();

            for p in enc.params_mut() {
                p.zero_grad();
            }
            for p in dec.params_mut() {
                p.zero_grad();
            }
            let d_code = dec.backward(&trace, &d_preds);
            enc.backward(&enc_caches, &d_code);

            let mut params = enc.params_mut();
            params.extend(dec.params_mut());
            adam.step(&mut params);
        }
        let mean_loss = loss_sum / n_batches.max(1) as f64;
        epoch_losses.push(mean_loss);
        let done = epoch + 1;
        let probed = if cfg.probe_every > 0 && done % cfg.probe_every == 0 && done != cfg.epochs {
            let n = probe(&enc, &dec);
            nmae_probes.push((done, n));
            Some(n)
        } else {
            None
        };
        on_epoch(done, mean_loss, probed, &enc, &dec);
    }

    let final_nmae = probe(&enc, &dec);
    Ok((enc, dec, PretrainReport { initial_nmae, final_nmae, epoch_losses, nmae_probes }))
}

/// Sum and count of |s - s_hat| / |s| over both channels, skipping
/// targets with magnitude below 1e-6 (the pinned first delay, mainly).
pub fn nmae_pointwise(target: &Mat, recon: &Mat) -> (f64, usize) {
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for (t, r) in target.iter().zip(recon.iter()) {
        if t.abs() < 1e-6 {
            continue;
        }
        sum += ((t - r).abs() / t.abs()) as f64;
        count += 1;
    }
    (sum, count)
}

/// Per-length normalized reconstruction error: element `i` is the NMAE
/// of reconstructing length-(i+1) prefixes of the given flows. A single
/// encoder scan per batch provides the codes for every length.
pub fn nmae_curve(
    enc: &StateEncoder,
    dec: &StateDecoder,
    flows: &Array3<f32>,
    max_len: usize,
) -> Vec<f64> {
    let (n, t_avail, _) = flows.dim();
    let max_len = max_len.min(t_avail);
    let mut sums = vec![0.0f64; max_len];
    let mut counts = vec![0usize; max_len];
    let chunk = 64usize;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let batch = flows.slice(ndarray::s![start..end, ..max_len, ..]).to_owned();
        let codes = enc.prefix_codes(&batch);
        for len in 1..=max_len {
            let preds = dec.decode(&codes[len - 1], len);
            for (t, pred) in preds.iter().enumerate() {
                let target = batch.index_axis(Axis(1), t).to_owned();
                let (s, c) = nmae_pointwise(&target, pred);
                sums[len - 1] += s;
                counts[len - 1] += c;
            }
        }
        start = end;
    }
    sums.iter().zip(counts.iter()).map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect()
}

/// Incremental encoder states for a batch of concurrently running
/// sequences (one row per environment). Pushing advances every active
/// row with a single batched step; codes() exposes the top-layer state.
pub struct BatchStream {
    h: Vec<Mat>,
}

impl BatchStream {
    pub fn new(enc: &StateEncoder, rows: usize) -> Self {
        BatchStream { h: enc.layers.iter().map(|g| g.zero_state(rows)).collect() }
    }

    pub fn rows(&self) -> usize {
        self.h[0].nrows()
    }

    /// Clears one row to the initial (empty-history) state.
    pub fn reset_row(&mut self, row: usize) {
        for h in &mut self.h {
            h.row_mut(row).fill(0.0);
        }
    }

    /// Advances the stream by one input per row. Rows marked inactive
    /// keep their state (the batched step still runs; their results are
    /// discarded).
    pub fn push(&mut self, enc: &StateEncoder, xs: &Mat, active: Option<&[bool]>) {
        let saved: Option<Vec<Mat>> = active.map(|_| self.h.clone());
        let mut x = xs.clone();
        for (l, gru) in enc.layers.iter().enumerate() {
            let h_new = gru.step_nocache(&x, &self.h[l]);
            x = h_new.clone();
            self.h[l] = h_new;
        }
        if let (Some(mask), Some(saved)) = (active, saved) {
            for (row, &keep_going) in mask.iter().enumerate() {
                if !keep_going {
                    for (l, h) in self.h.iter_mut().enumerate() {
                        h.row_mut(row).assign(&saved[l].row(row));
                    }
                }
            }
        }
    }

    /// Top-layer state: row r is the code of row r's pushed history.
    pub fn codes(&self) -> &Mat {
        self.h.last().unwrap()
    }

    pub fn code_row(&self, row: usize) -> Array1<f32> {
        self.codes().row(row).to_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_encoder(h: usize) -> StateEncoder {
        let mut rng = stream(7, "enc-test");
        StateEncoder::new(h, 2, &mut rng)
    }

    fn random_seq(rng: &mut Rng, len: usize) -> Vec<(f32, f32)> {
        (0..len)
            .map(|t| {
                (
                    rng.random_range(-1.0..1.0f32),
                    if t == 0 { 0.0 } else { rng.random_range(0.0..1.0f32) },
                )
            })
            .collect()
    }

    #[test]
    fn encode_is_fixed_size_and_deterministic() {
        let enc = tiny_encoder(32);
        let mut rng = stream(1, "seq");
        for len in [1usize, 2, 40, 60] {
            let seq = random_seq(&mut rng, len);
            let a = enc.encode(&seq).unwrap();
            let b = enc.encode(&seq).unwrap();
            assert_eq!(a.len(), 32);
            assert_eq!(a, b);
        }
        assert!(enc.encode(&[]).is_err());
    }

    #[test]
    fn single_packet_difference_separates_codes() {
        let enc = tiny_encoder(32);
        let mut rng = stream(2, "pairs");
        let mut separated = 0;
        let n = 1000;
        for _ in 0..n {
            let len = rng.random_range(2..20usize);
            let seq = random_seq(&mut rng, len);
            let mut other = seq.clone();
            let k = rng.random_range(0..len);
            other[k].0 = (other[k].0 + 0.7).rem_euclid(2.0) - 1.0;
            let a = enc.encode(&seq).unwrap();
            let b = enc.encode(&other).unwrap();
            let dist: f32 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
            if dist > 0.0 {
                separated += 1;
            }
        }
        assert!(separated >= n * 99 / 100, "only {separated}/{n} pairs separated");
    }

    #[test]
    fn prefix_codes_match_one_by_one_encoding() {
        let enc = tiny_encoder(16);
        let mut rng = stream(3, "prefix");
        let seqs: Vec<Vec<(f32, f32)>> = (0..3).map(|_| random_seq(&mut rng, 5)).collect();
        let mut batch = Array3::<f32>::zeros((3, 5, 2));
        for (i, seq) in seqs.iter().enumerate() {
            for (t, &(s, d)) in seq.iter().enumerate() {
                batch[[i, t, 0]] = s;
                batch[[i, t, 1]] = d;
            }
        }
        let codes = enc.prefix_codes(&batch);
        for (i, seq) in seqs.iter().enumerate() {
            for t in 0..5 {
                let direct = enc.encode(&seq[..=t]).unwrap();
                let fast = codes[t].row(i);
                for (a, b) in direct.iter().zip(fast.iter()) {
                    assert!((a - b).abs() < 1e-5, "prefix {t} row {i}");
                }
            }
        }
    }

    #[test]
    fn stream_push_tracks_encode_and_masking_freezes_rows() {
        let enc = tiny_encoder(16);
        let mut rng = stream(4, "stream");
        let seqs: Vec<Vec<(f32, f32)>> = (0..3).map(|_| random_seq(&mut rng, 4)).collect();
        let mut stream_state = BatchStream::new(&enc, 3);
        for t in 0..4 {
            let mut xs = Mat::zeros((3, 2));
            for i in 0..3 {
                xs[[i, 0]] = seqs[i][t].0;
                xs[[i, 1]] = seqs[i][t].1;
            }
            stream_state.push(&enc, &xs, None);
            for i in 0..3 {
                let direct = enc.encode(&seqs[i][..=t]).unwrap();
                let code = stream_state.code_row(i);
                for (a, b) in direct.iter().zip(code.iter()) {
                    assert!((a - b).abs() < 1e-5);
                }
            }
        }
        // A masked push must leave frozen rows bit-identical.
        let before = stream_state.code_row(1);
        let xs = Mat::from_elem((3, 2), 0.3);
        stream_state.push(&enc, &xs, Some(&[true, false, true]));
        assert_eq!(stream_state.code_row(1), before);
        // reset_row restores the empty-history state.
        stream_state.reset_row(0);
        assert!(stream_state.code_row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn nmae_closed_forms() {
        let target = Mat::from_shape_vec((2, 2), vec![0.5, -0.4, 0.2, 0.8]).unwrap();
        let (s, c) = nmae_pointwise(&target, &target.clone());
        assert_eq!(c, 4);
        assert_eq!(s, 0.0);
        let scaled = target.mapv(|v| 1.1 * v);
        let (s, c) = nmae_pointwise(&target, &scaled);
        assert_eq!(c, 4);
        assert!((s / c as f64 - 0.1).abs() < 1e-6);
        // Near-zero targets are skipped, not divided by.
        let mut with_zero = target.clone();
        with_zero[[0, 0]] = 0.0;
        let (_, c) = nmae_pointwise(&with_zero, &scaled);
        assert_eq!(c, 3);
    }

    #[test]
    fn seq2seq_gradients_match_finite_differences() {
        let mut rng = stream(11, "gradcheck");
        let enc = StateEncoder::new(6, 2, &mut rng);
        let dec = StateDecoder::new(6, 2, &mut rng);
        let mut batch = Array3::<f32>::zeros((2, 3, 2));
        for v in batch.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }

        let loss_of = |pair: &(StateEncoder, StateDecoder), batch: &Array3<f32>| -> f64 {
            let (code, _) = pair.0.forward_cached(batch);
            let trace = pair.1.forward_cached(&code, 3);
            let b = batch.dim().0;
            let mut pred_all = Mat::zeros((3 * b, 2));
            let mut target_all = Mat::zeros((3 * b, 2));
            for t in 0..3 {
                pred_all.slice_mut(ndarray::s![t * b..(t + 1) * b, ..]).assign(&trace.preds[t]);
                target_all
                    .slice_mut(ndarray::s![t * b..(t + 1) * b, ..])
                    .assign(&batch.index_axis(Axis(1), t));
            }
            mse_loss(&pred_all, &target_all).0
        };

        let mut pair = (enc, dec);
        // Analytic pass.
        let (code, enc_caches) = pair.0.forward_cached(&batch);
        let trace = pair.1.forward_cached(&code, 3);
        let b = 2;
        let mut pred_all = Mat::zeros((3 * b, 2));
        let mut target_all = Mat::zeros((3 * b, 2));
        for t in 0..3 {
            pred_all.slice_mut(ndarray::s![t * b..(t + 1) * b, ..]).assign(&trace.preds[t]);
            target_all
                .slice_mut(ndarray::s![t * b..(t + 1) * b, ..])
                .assign(&batch.index_axis(Axis(1), t));
        }
        let (_, grad_all) = mse_loss(&pred_all, &target_all);
        let d_preds: Vec<Mat> =
            (0..3).map(|t| grad_all.slice(ndarray::s![t * b..(t + 1) * b, ..]).to_owned()).collect();
        for p in pair.0.params_mut() {
            p.zero_grad();
        }
        for p in pair.1.params_mut() {
            p.zero_grad();
        }
        let d_code = pair.1.backward(&trace, &d_preds);
        pair.0.backward(&enc_caches, &d_code);

        // Numeric checks on a parameter from each part of the stack.
        let checks: Vec<(&str, usize)> = vec![("enc.l0", 0), ("enc.l1", 1)];
        for (name, l) in checks {
            let analytic = pair.0.layers[l].params()[0].grad.as_slice().unwrap().to_vec();
            let numeric = crate::nn::gradcheck::fd_grad_obj(
                &mut pair,
                |p| p.0.layers[l].params_mut().into_iter().next().unwrap().value.as_slice_mut().unwrap(),
                |p| loss_of(p, &batch),
                1e-3,
            );
            crate::nn::gradcheck::assert_close(&analytic, &numeric, name);
        }
        let analytic = pair.1.layers[1].params()[1].grad.as_slice().unwrap().to_vec();
        let numeric = crate::nn::gradcheck::fd_grad_obj(
            &mut pair,
            |p| p.1.layers[1].params_mut().into_iter().nth(1).unwrap().value.as_slice_mut().unwrap(),
            |p| loss_of(p, &batch),
            1e-3,
        );
        crate::nn::gradcheck::assert_close(&analytic, &numeric, "dec.l1.w_hh");
        let analytic = pair.1.head.params()[0].grad.as_slice().unwrap().to_vec();
        let numeric = crate::nn::gradcheck::fd_grad_obj(
            &mut pair,
            |p| p.1.head.params_mut().into_iter().next().unwrap().value.as_slice_mut().unwrap(),
            |p| loss_of(p, &batch),
            1e-3,
        );
        crate::nn::gradcheck::assert_close(&analytic, &numeric, "dec.head.w");
    }

    #[test]
    fn pretraining_shrinks_reconstruction_error() {
        let cfg = EncoderPretrainConfig {
            h: 48,
            layers: 2,
            t_max: 3,
            n_train: 512,
            n_test: 64,
            batch_size: 32,
            epochs: 60,
            lr: 3e-3,
            loss: ReconLoss::Mse,
            probe_every: 25,
            seed: 5,
        };
        let (enc, dec, report) = pretrain_encoder(&cfg).unwrap();
        assert!(report.final_nmae < report.initial_nmae, "{report:?}");
        assert!(
            report.epoch_losses.last().unwrap() < report.epoch_losses.first().unwrap(),
            "{report:?}"
        );
        // The cadence fires mid-run but not on the final epoch.
        assert_eq!(report.nmae_probes.iter().map(|p| p.0).collect::<Vec<_>>(), vec![25, 50]);
        // Round-trip: checkpoints reproduce codes and reconstructions.
        let dir = tempfile::tempdir().unwrap();
        let enc_path = dir.path().join("encoder.bin");
        let dec_path = dir.path().join("decoder.bin");
        enc.save(&enc_path).unwrap();
        dec.save(&dec_path).unwrap();
        let enc2 = StateEncoder::load(&enc_path).unwrap();
        let dec2 = StateDecoder::load(&dec_path).unwrap();
        assert_eq!(enc.checksum(), enc2.checksum());
        let seq = vec![(0.3f32, 0.0f32), (-0.8, 0.4)];
        assert_eq!(enc.encode(&seq).unwrap(), enc2.encode(&seq).unwrap());
        let flows = synthetic_flows(8, 3, &mut stream(9, "roundtrip"));
        let a = nmae_curve(&enc, &dec, &flows, 3);
        let b = nmae_curve(&enc2, &dec2, &flows, 3);
        assert_eq!(a, b);
    }

    #[test]
    fn pretrain_rejects_empty_config() {
        let cfg = EncoderPretrainConfig { n_train: 0, ..Default::default() };
        assert!(pretrain_encoder(&cfg).is_err());
    }
}
