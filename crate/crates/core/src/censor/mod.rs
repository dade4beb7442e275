//! The censoring classifiers: six models behind one prefix-scoring
//! interface. Scores live in [0, 1] with benign near 1; a flow is
//! permitted when its score clears the 0.5 threshold and blocked
//! otherwise.
//!
//! Tree models consume the 166-dimensional feature vector; the neural
//! and kernel models consume a normalized fixed-length (size, delay)
//! representation directly.

mod net;
mod svm;
mod tree;

pub use net::NetTrainConfig;
pub use svm::SvmConfig;
pub use tree::{ForestConfig, TreeConfig};

use crate::features::{FeatureExtractor, N_FEATURES};
use crate::flow::{Dataset, Flow, Label};
use crate::io::{Tensor, TensorFile};
use crate::{Error, Result};
use ndarray::Array2;
use net::{DfNet, LstmNet, SdaeNet};
use serde::{Deserialize, Serialize};
use std::path::Path;
use svm::SvmModel;
use tree::{Forest, Tree};

pub const MANIFEST_VERSION: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CensorKind {
    Sdae,
    Df,
    Lstm,
    Cumul,
    Dt,
    Rf,
}

impl CensorKind {
    pub const ALL: [CensorKind; 6] = [
        CensorKind::Dt,
        CensorKind::Rf,
        CensorKind::Sdae,
        CensorKind::Df,
        CensorKind::Lstm,
        CensorKind::Cumul,
    ];

    pub fn parse(s: &str) -> Result<CensorKind> {
        match s.to_ascii_lowercase().as_str() {
            "sdae" => Ok(CensorKind::Sdae),
            "df" => Ok(CensorKind::Df),
            "lstm" => Ok(CensorKind::Lstm),
            "cumul" => Ok(CensorKind::Cumul),
            "dt" => Ok(CensorKind::Dt),
            "rf" => Ok(CensorKind::Rf),
            other => Err(Error::Config(format!("unknown censor kind: {other}"))),
        }
    }

    pub fn input_mode(self) -> InputMode {
        match self {
            CensorKind::Dt | CensorKind::Rf => InputMode::FeatureVector,
            _ => InputMode::RawFlow,
        }
    }
}

impl std::fmt::Display for CensorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            CensorKind::Sdae => "sdae",
            CensorKind::Df => "df",
            CensorKind::Lstm => "lstm",
            CensorKind::Cumul => "cumul",
            CensorKind::Dt => "dt",
            CensorKind::Rf => "rf",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMode {
    RawFlow,
    FeatureVector,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CensorTrainConfig {
    /// Raw-input pad/truncate length.
    pub fixed_len: usize,
    /// Delay normalization cap for raw inputs, in ms.
    pub delay_scale_ms: f64,
    pub net: NetTrainConfigSerde,
    pub tree_max_depth: usize,
    pub n_trees: usize,
    pub svm_c: f64,
}

/// Serde-friendly mirror of the net trainer knobs.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NetTrainConfigSerde {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub pretrain_epochs: usize,
    pub noise: f64,
}

impl Default for NetTrainConfigSerde {
    fn default() -> Self {
        let d = NetTrainConfig::default();
        NetTrainConfigSerde {
            epochs: d.epochs,
            batch_size: d.batch_size,
            lr: d.lr,
            pretrain_epochs: d.pretrain_epochs,
            noise: d.noise,
        }
    }
}

impl NetTrainConfigSerde {
    fn to_net(&self) -> NetTrainConfig {
        NetTrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            pretrain_epochs: self.pretrain_epochs,
            noise: self.noise,
        }
    }
}

impl Default for CensorTrainConfig {
    fn default() -> Self {
        CensorTrainConfig {
            fixed_len: 80,
            delay_scale_ms: 1000.0,
            net: NetTrainConfigSerde::default(),
            tree_max_depth: 20,
            n_trees: 100,
            svm_c: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
enum CensorParams {
    Tree(Tree),
    Forest(Forest),
    Svm(SvmModel),
    Sdae(SdaeNet),
    Df(DfNet),
    Lstm(LstmNet),
}

/// A trained censoring classifier. Immutable once built; scoring is
/// read-only and safe to share.
#[derive(Debug, Clone)]
pub struct CensorModel {
    pub kind: CensorKind,
    pub fixed_len: usize,
    pub delay_scale_ms: f64,
    pub threshold: f64,
    pub max_unit: u32,
    params: CensorParams,
}

/// Decision rule: 1 = permitted (looks benign), 0 = blocked.
pub fn decide(y: f64) -> u8 {
    u8::from(y >= 0.5)
}

fn sigmoid64(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Anything that can score an emitted packet prefix. The environment
/// consumes this rather than a concrete model so tests can substitute
/// fixed-score stand-ins.
pub trait PrefixScorer {
    /// Score in [0, 1], benign near 1. Errors on an empty prefix.
    fn score_prefix(&self, sizes: &[i64], delays: &[f64]) -> Result<f64>;
}

impl CensorModel {
    pub fn input_mode(&self) -> InputMode {
        self.kind.input_mode()
    }

    /// Normalized, zero-padded / truncated (size, delay) pairs.
    fn raw_pairs(&self, sizes: &[i64], delays: &[f64]) -> Vec<(f32, f32)> {
        let mut v = vec![(0.0f32, 0.0f32); self.fixed_len];
        let mu = self.max_unit as f32;
        for i in 0..sizes.len().min(self.fixed_len) {
            v[i] = (
                sizes[i] as f32 / mu,
                (delays[i] / self.delay_scale_ms).min(1.0) as f32,
            );
        }
        v
    }

    fn features_of(&self, sizes: &[i64], delays: &[f64]) -> Result<Vec<f32>> {
        let flow = Flow::new(0, sizes.to_vec(), delays.to_vec(), Label::Benign)?;
        let row = FeatureExtractor::new(self.max_unit).extract(&flow);
        Ok(row.into_iter().map(|v| v as f32).collect())
    }

    pub fn score(&self, sizes: &[i64], delays: &[f64]) -> Result<f64> {
        if sizes.is_empty() {
            return Err(Error::Input("cannot score an empty prefix".into()));
        }
        if sizes.len() != delays.len() {
            return Err(Error::Input("size/delay length mismatch".into()));
        }
        let y = match &self.params {
            CensorParams::Tree(t) => t.predict(&self.features_of(sizes, delays)?) as f64,
            CensorParams::Forest(f) => f.predict(&self.features_of(sizes, delays)?) as f64,
            CensorParams::Svm(m) => {
                let pairs = self.raw_pairs(sizes, delays);
                let flat: Vec<f32> = pairs.iter().flat_map(|&(s, d)| [s, d]).collect();
                sigmoid64(m.decision(&flat))
            }
            CensorParams::Sdae(n) => {
                let pairs = vec![self.raw_pairs(sizes, delays)];
                sigmoid64(n.logits(&net::vecs_of(&pairs, &[0]))[0] as f64)
            }
            CensorParams::Df(n) => {
                let pairs = vec![self.raw_pairs(sizes, delays)];
                sigmoid64(n.logits(&net::channels_of(&pairs, &[0]))[0] as f64)
            }
            CensorParams::Lstm(n) => {
                let pairs = vec![self.raw_pairs(sizes, delays)];
                sigmoid64(n.logits(&net::seq_of(&pairs, &[0]))[0] as f64)
            }
        };
        debug_assert!((0.0..=1.0).contains(&y));
        Ok(y)
    }

    pub fn score_flow(&self, flow: &Flow) -> Result<f64> {
        self.score(&flow.sizes, &flow.delays_ms)
    }

    /// Decision under this model's threshold: 1 = permitted.
    pub fn decide(&self, y: f64) -> u8 {
        u8::from(y >= self.threshold)
    }

    /// Impurity-decrease feature importances; only tree censors have them.
    pub fn importances(&self) -> Result<&[f64]> {
        match &self.params {
            CensorParams::Tree(t) => Ok(&t.importances),
            CensorParams::Forest(f) => Ok(&f.importances),
            _ => Err(Error::Input(format!(
                "feature importances require a tree-based censor, not {}",
                self.kind
            ))),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut meta = serde_json::json!({
            "kind": self.kind.to_string(),
            "manifest_version": MANIFEST_VERSION,
            "fixed_len": self.fixed_len,
            "delay_scale_ms": self.delay_scale_ms,
            "threshold": self.threshold,
            "max_unit": self.max_unit,
        });
        let mut tensors: Vec<Tensor> = Vec::new();
        match &self.params {
            CensorParams::Tree(t) => {
                tensors.push(tree_nodes_tensor("tree.nodes", t));
                meta["importances"] = serde_json::json!(t.importances);
            }
            CensorParams::Forest(f) => {
                meta["n_trees"] = serde_json::json!(f.trees.len());
                for (i, t) in f.trees.iter().enumerate() {
                    tensors.push(tree_nodes_tensor(&format!("forest.{i}.nodes"), t));
                }
                meta["importances"] = serde_json::json!(f.importances);
            }
            CensorParams::Svm(m) => {
                meta["svm_bias"] = serde_json::json!(m.bias);
                meta["svm_gamma"] = serde_json::json!(m.gamma);
                tensors.push(Tensor::new(
                    "svm.sv",
                    vec![m.sv.nrows(), m.sv.ncols()],
                    m.sv.iter().copied().collect(),
                ));
                tensors.push(Tensor::new(
                    "svm.coef",
                    vec![m.coef.len()],
                    m.coef.iter().map(|&c| c as f32).collect(),
                ));
            }
            CensorParams::Sdae(n) => tensors.extend(n.params().iter().map(|p| p.to_tensor())),
            CensorParams::Df(n) => tensors.extend(n.params().iter().map(|p| p.to_tensor())),
            CensorParams::Lstm(n) => tensors.extend(n.params().iter().map(|p| p.to_tensor())),
        }
        TensorFile { meta, tensors }.save(path)
    }

    pub fn load(path: &Path) -> Result<CensorModel> {
        let file = TensorFile::load(path)?;
        let kind = CensorKind::parse(&file.meta_str("kind")?)?;
        let fixed_len = file.meta_u64("fixed_len")? as usize;
        let delay_scale_ms = file.meta_f64("delay_scale_ms")?;
        let threshold = file.meta_f64("threshold")?;
        let max_unit = file.meta_u64("max_unit")? as u32;
        let params = match kind {
            CensorKind::Dt => CensorParams::Tree(tree_from_file(&file, "tree.nodes", true)?),
            CensorKind::Rf => {
                let n_trees = file.meta_u64("n_trees")? as usize;
                let mut trees = Vec::with_capacity(n_trees);
                for i in 0..n_trees {
                    trees.push(tree_from_file(&file, &format!("forest.{i}.nodes"), false)?);
                }
                let importances = importances_from_meta(&file)?;
                CensorParams::Forest(Forest { trees, importances })
            }
            CensorKind::Cumul => {
                let sv_t = file.get("svm.sv")?;
                let coef_t = file.get("svm.coef")?;
                let sv = Array2::from_shape_vec(
                    (sv_t.shape[0], sv_t.shape[1]),
                    sv_t.data.clone(),
                )
                .map_err(|e| Error::Checkpoint(e.to_string()))?;
                CensorParams::Svm(SvmModel {
                    sv,
                    coef: coef_t.data.iter().map(|&c| c as f64).collect(),
                    bias: file.meta_f64("svm_bias")?,
                    gamma: file.meta_f64("svm_gamma")?,
                })
            }
            CensorKind::Sdae => {
                CensorParams::Sdae(SdaeNet::from_tensors(2 * fixed_len, &file.tensors)?)
            }
            CensorKind::Df => CensorParams::Df(DfNet::from_tensors(fixed_len, &file.tensors)?),
            CensorKind::Lstm => CensorParams::Lstm(LstmNet::from_tensors(&file.tensors)?),
        };
        Ok(CensorModel { kind, fixed_len, delay_scale_ms, threshold, max_unit, params })
    }
}

impl PrefixScorer for CensorModel {
    fn score_prefix(&self, sizes: &[i64], delays: &[f64]) -> Result<f64> {
        self.score(sizes, delays)
    }
}

fn tree_nodes_tensor(name: &str, t: &Tree) -> Tensor {
    let n = t.n_nodes();
    let mut data = Vec::with_capacity(n * 5);
    for i in 0..n {
        data.push(t.feature[i] as f32);
        data.push(t.threshold[i]);
        data.push(t.left[i] as f32);
        data.push(t.right[i] as f32);
        data.push(t.value[i]);
    }
    Tensor::new(name, vec![n, 5], data)
}

fn tree_from_nodes(t: &Tensor) -> Result<Tree> {
    if t.shape.len() != 2 || t.shape[1] != 5 {
        return Err(Error::Checkpoint(format!("bad tree tensor shape {:?}", t.shape)));
    }
    let n = t.shape[0];
    let mut tree = Tree::default();
    for i in 0..n {
        let row = &t.data[i * 5..i * 5 + 5];
        tree.feature.push(row[0] as i32);
        tree.threshold.push(row[1]);
        tree.left.push(row[2] as u32);
        tree.right.push(row[3] as u32);
        tree.value.push(row[4]);
    }
    Ok(tree)
}

fn importances_from_meta(file: &TensorFile) -> Result<Vec<f64>> {
    file.meta
        .get("importances")
        .and_then(|v| v.as_array())
        .map(|a| a.iter().map(|x| x.as_f64().unwrap_or(0.0)).collect())
        .ok_or_else(|| Error::Checkpoint("missing importances".into()))
}

fn tree_from_file(file: &TensorFile, name: &str, with_importances: bool) -> Result<Tree> {
    let mut tree = tree_from_nodes(file.get(name)?)?;
    if with_importances {
        tree.importances = importances_from_meta(file)?;
    }
    Ok(tree)
}

/// Trains one censor on complete flows. Deterministic under `seed`.
pub fn train_censor(
    kind: CensorKind,
    data: &Dataset,
    cfg: &CensorTrainConfig,
    seed: u64,
) -> Result<CensorModel> {
    let n_sensitive = data.count_label(Label::Sensitive);
    let n_benign = data.count_label(Label::Benign);
    if n_sensitive == 0 || n_benign == 0 {
        return Err(Error::SingleClass);
    }
    let max_unit = data.mode.max_unit();
    let mut model = CensorModel {
        kind,
        fixed_len: cfg.fixed_len,
        delay_scale_ms: cfg.delay_scale_ms,
        threshold: 0.5,
        max_unit,
        params: CensorParams::Tree(Tree::default()),
    };

    match kind.input_mode() {
        InputMode::FeatureVector => {
            let ex = FeatureExtractor::new(max_unit);
            let n = data.flows.len();
            let mut x = Array2::zeros((n, N_FEATURES));
            let mut y = vec![0u8; n];
            for (i, f) in data.flows.iter().enumerate() {
                let row = ex.extract(f);
                for (j, &v) in row.iter().enumerate() {
                    x[[i, j]] = v as f32;
                }
                y[i] = u8::from(f.label == Label::Benign);
            }
            let tree_cfg = TreeConfig { max_depth: cfg.tree_max_depth, ..Default::default() };
            model.params = match kind {
                CensorKind::Dt => CensorParams::Tree(Tree::fit(&x, &y, &tree_cfg, None)),
                CensorKind::Rf => {
                    let fcfg = ForestConfig { n_trees: cfg.n_trees, tree: tree_cfg };
                    CensorParams::Forest(Forest::fit(&x, &y, &fcfg, seed))
                }
                _ => unreachable!(),
            };
        }
        InputMode::RawFlow => {
            let inputs: Vec<Vec<(f32, f32)>> = data
                .flows
                .iter()
                .map(|f| model.raw_pairs(&f.sizes, &f.delays_ms))
                .collect();
            let net_cfg = cfg.net.to_net();
            model.params = match kind {
                CensorKind::Sdae => {
                    let labels: Vec<f32> = data
                        .flows
                        .iter()
                        .map(|f| f32::from(f.label == Label::Benign))
                        .collect();
                    CensorParams::Sdae(SdaeNet::train(&inputs, &labels, &net_cfg, seed))
                }
                CensorKind::Df => {
                    let labels: Vec<f32> = data
                        .flows
                        .iter()
                        .map(|f| f32::from(f.label == Label::Benign))
                        .collect();
                    CensorParams::Df(DfNet::train(&inputs, &labels, &net_cfg, seed))
                }
                CensorKind::Lstm => {
                    let labels: Vec<f32> = data
                        .flows
                        .iter()
                        .map(|f| f32::from(f.label == Label::Benign))
                        .collect();
                    CensorParams::Lstm(LstmNet::train(&inputs, &labels, &net_cfg, seed))
                }
                CensorKind::Cumul => {
                    let n = inputs.len();
                    let d = cfg.fixed_len * 2;
                    let mut x = Array2::zeros((n, d));
                    let mut y = vec![0.0f64; n];
                    for (i, pairs) in inputs.iter().enumerate() {
                        for (j, &(s, t)) in pairs.iter().enumerate() {
                            x[[i, 2 * j]] = s;
                            x[[i, 2 * j + 1]] = t;
                        }
                        y[i] = if data.flows[i].label == Label::Benign { 1.0 } else { -1.0 };
                    }
                    let svm_cfg = SvmConfig { c: cfg.svm_c, ..Default::default() };
                    CensorParams::Svm(SvmModel::fit(&x, &y, &svm_cfg, seed))
                }
                _ => unreachable!(),
            };
        }
    }
    Ok(model)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Metrics with "sensitive" as the positive class. Degenerate
/// denominators yield 0 rather than NaN.
pub fn metrics_from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> ClassifierMetrics {
    let total = (tp + fp + tn + fn_) as f64;
    let accuracy = (tp + tn) as f64 / total;
    let precision = if tp + fp > 0 { tp as f64 / (tp + fp) as f64 } else { 0.0 };
    let recall = if tp + fn_ > 0 { tp as f64 / (tp + fn_) as f64 } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    ClassifierMetrics { accuracy, precision, recall, f1 }
}

/// Scores every flow and tallies the confusion matrix; "blocked" means
/// predicted sensitive.
pub fn evaluate_censor(model: &CensorModel, data: &Dataset) -> Result<ClassifierMetrics> {
    if data.flows.is_empty() {
        return Err(Error::Input("cannot evaluate on an empty dataset".into()));
    }
    if data.count_label(Label::Sensitive) == 0 || data.count_label(Label::Benign) == 0 {
        return Err(Error::SingleClass);
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for f in &data.flows {
        let permitted = model.decide(model.score_flow(f)?) == 1;
        match (f.label, permitted) {
            (Label::Sensitive, false) => tp += 1,
            (Label::Benign, false) => fp += 1,
            (Label::Benign, true) => tn += 1,
            (Label::Sensitive, true) => fn_ += 1,
        }
    }
    Ok(metrics_from_counts(tp, fp, tn, fn_))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{generate_dataset, GeneratorConfig, Mode};
    use tempfile::tempdir;

    fn small_dataset(n: usize, seed: u64) -> Dataset {
        let cfg = GeneratorConfig {
            n_flows: n,
            min_len: 10,
            max_len: 30,
            ..GeneratorConfig::for_mode(Mode::Tcp)
        };
        generate_dataset(&cfg, seed).unwrap()
    }

    fn quick_cfg() -> CensorTrainConfig {
        CensorTrainConfig {
            fixed_len: 16,
            n_trees: 10,
            net: NetTrainConfigSerde {
                epochs: 3,
                pretrain_epochs: 1,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn decision_rule_boundaries() {
        assert_eq!(decide(0.5), 1);
        assert_eq!(decide(0.49), 0);
        assert_eq!(decide(1.0), 1);
        assert_eq!(decide(0.0), 0);
    }

    #[test]
    fn metrics_match_hand_computation() {
        let m = metrics_from_counts(45, 5, 40, 10);
        assert!((m.accuracy - 0.85).abs() < 1e-12);
        assert!((m.precision - 0.9).abs() < 1e-12);
        assert!((m.recall - 45.0 / 55.0).abs() < 1e-12);
        let harmonic = 2.0 * m.precision * m.recall / (m.precision + m.recall);
        assert!((m.f1 - harmonic).abs() < 1e-9);
        assert!((m.f1 - 0.857142857).abs() < 1e-6);
    }

    #[test]
    fn degenerate_counts_do_not_produce_nan() {
        let m = metrics_from_counts(0, 0, 10, 10);
        assert_eq!(m.precision, 0.0);
        assert_eq!(m.recall, 0.0);
        assert_eq!(m.f1, 0.0);
        assert!((m.accuracy - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_class_data_is_rejected() {
        let mut data = small_dataset(40, 1);
        data.flows.retain(|f| f.label == Label::Benign);
        let err = train_censor(CensorKind::Dt, &data, &quick_cfg(), 0).unwrap_err();
        assert!(matches!(err, Error::SingleClass));

        let full = small_dataset(40, 1);
        let model = train_censor(CensorKind::Dt, &full, &quick_cfg(), 0).unwrap();
        let err = evaluate_censor(&model, &data).unwrap_err();
        assert!(matches!(err, Error::SingleClass));
    }

    #[test]
    fn tree_censor_separates_synthetic_classes() {
        let train = small_dataset(200, 2);
        let test = small_dataset(80, 3);
        let model = train_censor(CensorKind::Dt, &train, &quick_cfg(), 0).unwrap();
        let m = evaluate_censor(&model, &test).unwrap();
        assert!(m.f1 >= 0.9, "f1 = {}", m.f1);
        // Held-out benign flows overwhelmingly score permitted.
        let benign_ok = test
            .flows
            .iter()
            .filter(|f| f.label == Label::Benign)
            .filter(|f| model.score_flow(f).unwrap() >= 0.5)
            .count();
        let benign_total = test.count_label(Label::Benign);
        assert!(benign_ok as f64 / benign_total as f64 >= 0.95);
    }

    #[test]
    fn scores_stay_in_unit_interval_even_at_length_one() {
        let train = small_dataset(60, 4);
        for kind in CensorKind::ALL {
            let model = train_censor(kind, &train, &quick_cfg(), 1).unwrap();
            let y = model.score(&[700], &[0.0]).unwrap();
            assert!((0.0..=1.0).contains(&y), "{kind}: {y}");
        }
    }

    #[test]
    fn empty_prefix_is_an_error() {
        let train = small_dataset(40, 5);
        let model = train_censor(CensorKind::Dt, &train, &quick_cfg(), 1).unwrap();
        assert!(model.score(&[], &[]).is_err());
    }

    #[test]
    fn raw_models_ignore_bytes_beyond_fixed_len() {
        let train = small_dataset(60, 6);
        let cfg = quick_cfg();
        for kind in [CensorKind::Sdae, CensorKind::Df, CensorKind::Lstm, CensorKind::Cumul] {
            let model = train_censor(kind, &train, &cfg, 2).unwrap();
            let n = cfg.fixed_len + 5;
            let sizes: Vec<i64> = (0..n).map(|i| if i % 2 == 0 { 500 } else { -700 }).collect();
            let mut delays: Vec<f64> = vec![3.0; n];
            delays[0] = 0.0;
            let base = model.score(&sizes, &delays).unwrap();
            let mut sizes2 = sizes.clone();
            let mut delays2 = delays.clone();
            for i in cfg.fixed_len..n {
                sizes2[i] = -1;
                delays2[i] = 999.0;
            }
            let changed_tail = model.score(&sizes2, &delays2).unwrap();
            assert_eq!(base, changed_tail, "{kind}");
        }
    }

    #[test]
    fn importances_only_exist_for_tree_censors() {
        let train = small_dataset(60, 7);
        let cfg = quick_cfg();
        let dt = train_censor(CensorKind::Dt, &train, &cfg, 1).unwrap();
        let imp = dt.importances().unwrap();
        assert_eq!(imp.len(), N_FEATURES);
        let s: f64 = imp.iter().sum();
        assert!((s - 1.0).abs() < 1e-9);
        let sdae = train_censor(CensorKind::Sdae, &train, &cfg, 1).unwrap();
        assert!(sdae.importances().is_err());
    }

    #[test]
    fn save_load_roundtrip_preserves_scores() {
        let train = small_dataset(60, 8);
        let test = small_dataset(10, 9);
        let dir = tempdir().unwrap();
        let cfg = quick_cfg();
        for kind in CensorKind::ALL {
            let model = train_censor(kind, &train, &cfg, 3).unwrap();
            let path = dir.path().join(format!("{kind}.censor"));
            model.save(&path).unwrap();
            let loaded = CensorModel::load(&path).unwrap();
            assert_eq!(loaded.kind, kind);
            assert_eq!(loaded.fixed_len, cfg.fixed_len);
            for f in &test.flows {
                let a = model.score_flow(f).unwrap();
                let b = loaded.score_flow(f).unwrap();
                assert!((a - b).abs() < 1e-9, "{kind}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn training_is_seed_deterministic_end_to_end() {
        let train = small_dataset(60, 10);
        let test = small_dataset(20, 11);
        let cfg = quick_cfg();
        for kind in [CensorKind::Rf, CensorKind::Cumul] {
            let a = train_censor(kind, &train, &cfg, 5).unwrap();
            let b = train_censor(kind, &train, &cfg, 5).unwrap();
            for f in &test.flows {
                assert_eq!(a.score_flow(f).unwrap(), b.score_flow(f).unwrap(), "{kind}");
            }
        }
    }
}
