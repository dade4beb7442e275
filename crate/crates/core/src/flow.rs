//! Flow records, the synthetic two-class traffic generator, CSV
//! ingest/export and stratified dataset splits.
//!
//! A flow is a sequence of signed packet sizes (bytes; positive =
//! client-to-server) plus non-negative inter-packet delays in
//! milliseconds, labeled `sensitive` (tunneled) or `benign`. The first
//! delay of a flow is always 0 by convention: delays are inter-packet
//! gaps, and the first packet has no predecessor.

use crate::rng::{indexed_stream, stream, Rng};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Sensitive,
    Benign,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Sensitive => write!(f, "sensitive"),
            Label::Benign => write!(f, "benign"),
        }
    }
}

/// Transport flavor: sets the per-packet payload ceiling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Plain TCP segments (Tor-like tunnels): 1460-byte MSS.
    Tcp,
    /// TLS records (V2Ray-like tunnels): 16 KiB records.
    Tls,
}

impl Mode {
    pub fn max_unit(self) -> u32 {
        match self {
            Mode::Tcp => 1460,
            Mode::Tls => 16384,
        }
    }

    pub fn parse(s: &str) -> Result<Mode> {
        match s {
            "tcp" => Ok(Mode::Tcp),
            "tls" => Ok(Mode::Tls),
            other => Err(Error::Config(format!("unknown mode {other:?} (expected tcp|tls)"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Tcp => write!(f, "tcp"),
            Mode::Tls => write!(f, "tls"),
        }
    }
}

/// One labeled flow. Invariants (checked by [`Flow::new`]):
/// sizes and delays have equal nonzero length, no size is 0,
/// `delays_ms[0] == 0`, every delay is finite and >= 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Flow {
    pub id: u64,
    pub sizes: Vec<i64>,
    pub delays_ms: Vec<f64>,
    pub label: Label,
}

impl Flow {
    pub fn new(id: u64, sizes: Vec<i64>, delays_ms: Vec<f64>, label: Label) -> Result<Flow> {
        if sizes.is_empty() {
            return Err(Error::Input(format!("flow {id}: empty")));
        }
        if sizes.len() != delays_ms.len() {
            return Err(Error::Input(format!(
                "flow {id}: {} sizes vs {} delays",
                sizes.len(),
                delays_ms.len()
            )));
        }
        if let Some(pos) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Input(format!("flow {id}: packet {pos} has size 0")));
        }
        if delays_ms[0] != 0.0 {
            return Err(Error::Input(format!("flow {id}: first delay must be 0")));
        }
        if let Some(pos) = delays_ms.iter().position(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::Input(format!("flow {id}: packet {pos} has invalid delay")));
        }
        Ok(Flow { id, sizes, delays_ms, label })
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    /// Total payload bytes, directionless.
    pub fn total_bytes(&self) -> u64 {
        self.sizes.iter().map(|s| s.unsigned_abs()).sum()
    }

    /// Last-minus-first packet timestamp in ms (== sum of delays).
    pub fn duration_ms(&self) -> f64 {
        self.delays_ms.iter().sum()
    }

    /// Checks every |size| against the mode's per-packet ceiling.
    pub fn check_bounds(&self, max_unit: u32) -> Result<()> {
        for (i, &s) in self.sizes.iter().enumerate() {
            if s.unsigned_abs() > max_unit as u64 {
                return Err(Error::Input(format!(
                    "flow {}: packet {i} size {s} exceeds max unit {max_unit}",
                    self.id
                )));
            }
        }
        Ok(())
    }

    /// First `n` packets as a flow (n >= 1).
    pub fn prefix(&self, n: usize) -> Flow {
        let n = n.clamp(1, self.len());
        Flow {
            id: self.id,
            sizes: self.sizes[..n].to_vec(),
            delays_ms: self.delays_ms[..n].to_vec(),
            label: self.label,
        }
    }
}

/// Fraction of packets whose |size| is within `tol` of a positive
/// multiple of `cell`. This is the fingerprint that separates tunneled
/// traffic (fixed-size cells) from organic traffic.
pub fn cell_alignment_fraction(flow: &Flow, cell: u32, tol: u32) -> f64 {
    if flow.is_empty() {
        return 0.0;
    }
    let aligned = flow
        .sizes
        .iter()
        .filter(|&&s| {
            let a = s.unsigned_abs();
            let k = ((a + cell as u64 / 2) / cell as u64).max(1);
            a.abs_diff(k * cell as u64) <= tol as u64
        })
        .count();
    aligned as f64 / flow.len() as f64
}

/// Threshold rule used as the generator's label-consistency oracle:
/// a flow is called sensitive iff at least half of its packets are
/// cell-aligned within ±`tol`.
pub fn threshold_rule_label(flow: &Flow, cell: u32, tol: u32) -> Label {
    if cell_alignment_fraction(flow, cell, tol) >= 0.5 {
        Label::Sensitive
    } else {
        Label::Benign
    }
}

/// Synthetic generator settings. Defaults model a Tor-like TCP tunnel
/// against organic web traffic; `for_mode(Mode::Tls)` switches to
/// TLS-record geometry.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub mode: Mode,
    pub n_flows: usize,
    /// Fraction of flows labeled sensitive.
    pub sensitive_fraction: f64,
    pub min_len: usize,
    pub max_len: usize,
    /// Tunnel cell size; sensitive packet sizes cluster at multiples of it.
    pub cell_size: u32,
    /// Uniform size jitter on sensitive data packets, in bytes.
    pub jitter_max: u32,
    /// Extra per-record framing added on top of cell multiples (TLS mode).
    pub record_overhead: u32,
    /// Probability that a packet is duplicated in place (retransmission).
    pub drop_rate: f64,
    /// Median/sigma of the benign packet-size log-normal.
    pub benign_size_median: f64,
    pub benign_size_sigma: f64,
    /// Within-burst delay log-normals (ms), per class.
    pub sensitive_gap_median_ms: f64,
    pub sensitive_gap_sigma: f64,
    pub benign_gap_median_ms: f64,
    pub benign_gap_sigma: f64,
    /// Between-burst delay log-normals (ms), per class.
    pub sensitive_burst_gap_median_ms: f64,
    pub sensitive_burst_gap_sigma: f64,
    pub benign_burst_gap_median_ms: f64,
    pub benign_burst_gap_sigma: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig::for_mode(Mode::Tcp)
    }
}

impl GeneratorConfig {
    pub fn for_mode(mode: Mode) -> Self {
        GeneratorConfig {
            mode,
            n_flows: 1000,
            sensitive_fraction: 0.5,
            min_len: 10,
            max_len: 60,
            cell_size: 536,
            jitter_max: 12,
            record_overhead: match mode {
                Mode::Tcp => 0,
                Mode::Tls => 29,
            },
            drop_rate: 0.02,
            benign_size_median: match mode {
                Mode::Tcp => 600.0,
                Mode::Tls => 1200.0,
            },
            benign_size_sigma: 0.9,
            sensitive_gap_median_ms: 15.0,
            sensitive_gap_sigma: 0.6,
            benign_gap_median_ms: 40.0,
            benign_gap_sigma: 0.9,
            sensitive_burst_gap_median_ms: 120.0,
            sensitive_burst_gap_sigma: 0.5,
            benign_burst_gap_median_ms: 220.0,
            benign_burst_gap_sigma: 0.8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mu = self.mode.max_unit();
        if self.n_flows == 0 {
            return Err(Error::Config("n_flows must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.sensitive_fraction) {
            return Err(Error::Config("sensitive_fraction must be in [0,1]".into()));
        }
        if self.min_len < 2 || self.max_len < self.min_len {
            return Err(Error::Config("need 2 <= min_len <= max_len".into()));
        }
        if self.cell_size == 0 || self.cell_size + self.record_overhead + self.jitter_max > mu {
            return Err(Error::Config(format!(
                "cell_size {} + overhead {} + jitter {} must fit in max unit {}",
                self.cell_size, self.record_overhead, self.jitter_max, mu
            )));
        }
        if !(0.0..=0.1).contains(&self.drop_rate) {
            return Err(Error::Config("drop_rate must be in [0, 0.1]".into()));
        }
        if self.benign_size_median < 1.0 || self.benign_size_median > mu as f64 {
            return Err(Error::Config("benign_size_median out of range".into()));
        }
        for (name, v) in [
            ("sensitive_gap_median_ms", self.sensitive_gap_median_ms),
            ("benign_gap_median_ms", self.benign_gap_median_ms),
            ("sensitive_burst_gap_median_ms", self.sensitive_burst_gap_median_ms),
            ("benign_burst_gap_median_ms", self.benign_burst_gap_median_ms),
        ] {
            if v <= 0.0 || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Largest cell multiple that fits under the size ceiling with
    /// jitter and framing applied.
    fn max_k(&self) -> u32 {
        ((self.mode.max_unit() - self.record_overhead - self.jitter_max) / self.cell_size).max(1)
    }
}

/// A labeled flow set plus the context needed to interpret it.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub mode: Mode,
    pub flows: Vec<Flow>,
    /// Where the data came from: generator config digest or source path.
    pub provenance: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.flows.iter().filter(|f| f.label == label).count()
    }

    pub fn filter_label(&self, label: Label) -> Dataset {
        Dataset {
            mode: self.mode,
            flows: self.flows.iter().filter(|f| f.label == label).cloned().collect(),
            provenance: format!("{} [{label}]", self.provenance),
        }
    }
}

/// The four standard partitions of a dataset.
#[derive(Debug, Clone)]
pub struct Splits {
    /// Trains the censor classifiers.
    pub clf_train: Dataset,
    /// Drives agent episodes.
    pub attack_train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
}

// --- generator -------------------------------------------------------------

struct ClassParams {
    gap: LogNormal<f64>,
    burst_gap: LogNormal<f64>,
}

fn lognormal(median: f64, sigma: f64) -> LogNormal<f64> {
    LogNormal::new(median.ln(), sigma).expect("validated sigma")
}

/// Internal generation result: flow plus which packets are injected
/// retransmissions (used by tests; not part of the public dataset).
pub(crate) fn generate_flow_marked(
    cfg: &GeneratorConfig,
    id: u64,
    label: Label,
    rng: &mut Rng,
) -> (Flow, Vec<bool>) {
    let params = match label {
        Label::Sensitive => ClassParams {
            gap: lognormal(cfg.sensitive_gap_median_ms, cfg.sensitive_gap_sigma),
            burst_gap: lognormal(cfg.sensitive_burst_gap_median_ms, cfg.sensitive_burst_gap_sigma),
        },
        Label::Benign => ClassParams {
            gap: lognormal(cfg.benign_gap_median_ms, cfg.benign_gap_sigma),
            burst_gap: lognormal(cfg.benign_burst_gap_median_ms, cfg.benign_burst_gap_sigma),
        },
    };
    let target_len = rng.random_range(cfg.min_len..=cfg.max_len);
    let mu = cfg.mode.max_unit() as i64;

    let mut sizes: Vec<i64> = Vec::with_capacity(target_len + 4);
    let mut fwd: Vec<bool> = Vec::with_capacity(target_len + 4);
    // "burst start" marks drive the two-level delay model below.
    let mut burst_start: Vec<bool> = Vec::with_capacity(target_len + 4);

    match label {
        Label::Sensitive => {
            // Handshake packet: the only non-cell-aligned packet, so any
            // flow of >= 10 packets stays >= 80% aligned by construction.
            sizes.push(rng.random_range(150..=400));
            fwd.push(true);
            burst_start.push(true);
            let size_of = |k: u32, rng: &mut Rng| -> i64 {
                let jitter =
                    rng.random_range(-(cfg.jitter_max as i64)..=cfg.jitter_max as i64);
                let s = (k as i64) * cfg.cell_size as i64 + cfg.record_overhead as i64 + jitter;
                s.clamp(1, mu)
            };
            let max_k = cfg.max_k();
            while sizes.len() < target_len {
                // Request burst: 1-2 upstream cells.
                let n_req = rng.random_range(1..=2usize);
                for i in 0..n_req {
                    if sizes.len() >= target_len {
                        break;
                    }
                    let k = if max_k >= 2 && rng.random_bool(0.15) { 2 } else { 1 };
                    sizes.push(size_of(k, rng));
                    fwd.push(true);
                    burst_start.push(i == 0);
                }
                // Response burst: 2-8 downstream cells, occasionally multi-cell.
                let n_resp = rng.random_range(2..=8usize);
                for i in 0..n_resp {
                    if sizes.len() >= target_len {
                        break;
                    }
                    let hi = max_k.min(match cfg.mode {
                        Mode::Tcp => 2,
                        Mode::Tls => 8,
                    });
                    let k = if hi >= 2 && rng.random_bool(0.4) {
                        rng.random_range(2..=hi)
                    } else {
                        1
                    };
                    sizes.push(-size_of(k, rng));
                    fwd.push(false);
                    burst_start.push(i == 0);
                }
            }
        }
        Label::Benign => {
            let body = lognormal(cfg.benign_size_median, cfg.benign_size_sigma);
            let req = lognormal(cfg.benign_size_median * 0.5, cfg.benign_size_sigma);
            let clip = |x: f64| -> i64 { (x.round() as i64).clamp(40, mu) };
            while sizes.len() < target_len {
                let n_req = rng.random_range(1..=3usize);
                for i in 0..n_req {
                    if sizes.len() >= target_len {
                        break;
                    }
                    sizes.push(clip(req.sample(rng)));
                    fwd.push(true);
                    burst_start.push(i == 0);
                }
                let n_resp = rng.random_range(1..=8usize);
                for i in 0..n_resp {
                    if sizes.len() >= target_len {
                        break;
                    }
                    sizes.push(-clip(body.sample(rng)));
                    fwd.push(false);
                    burst_start.push(i == 0);
                }
            }
        }
    }

    let mut delays: Vec<f64> = Vec::with_capacity(sizes.len());
    for (i, &bs) in burst_start.iter().enumerate() {
        if i == 0 {
            delays.push(0.0);
        } else if bs {
            delays.push(params.burst_gap.sample(rng));
        } else {
            delays.push(params.gap.sample(rng));
        }
    }

    // Retransmissions: duplicate a packet in place with a fresh delay.
    let mut out_sizes = Vec::with_capacity(sizes.len() + 4);
    let mut out_delays = Vec::with_capacity(sizes.len() + 4);
    let mut retrans = Vec::with_capacity(sizes.len() + 4);
    for i in 0..sizes.len() {
        out_sizes.push(sizes[i]);
        out_delays.push(delays[i]);
        retrans.push(false);
        // A duplicate is allowed only if the final length (current output
        // plus the originals still to come) stays within max_len.
        if cfg.drop_rate > 0.0
            && out_sizes.len() + (sizes.len() - i) <= cfg.max_len
            && i > 0
            && rng.random_bool(cfg.drop_rate)
        {
            out_sizes.push(sizes[i]);
            out_delays.push(params.gap.sample(rng));
            retrans.push(true);
        }
    }

    let flow = Flow::new(id, out_sizes, out_delays, label).expect("generator invariants");
    (flow, retrans)
}

/// Generates a labeled synthetic dataset. Identical `(cfg, seed)` pairs
/// produce byte-identical datasets: each flow draws from its own
/// index-derived stream.
pub fn generate_dataset(cfg: &GeneratorConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let n_sensitive = (cfg.n_flows as f64 * cfg.sensitive_fraction).round() as usize;
    let mut flows = Vec::with_capacity(cfg.n_flows);
    for i in 0..cfg.n_flows {
        let label = if i < n_sensitive { Label::Sensitive } else { Label::Benign };
        let mut rng = indexed_stream(seed, "flowgen", i as u64);
        let (flow, _) = generate_flow_marked(cfg, i as u64, label, &mut rng);
        flows.push(flow);
    }
    Ok(Dataset {
        mode: cfg.mode,
        flows,
        provenance: format!("synthetic mode={} n={} seed={}", cfg.mode, cfg.n_flows, seed),
    })
}

// --- CSV -------------------------------------------------------------------

const CSV_HEADER: &str = "flow_id,ts_ms,size,label";

/// Writes the dataset as packet rows `flow_id,ts_ms,size,label`, with
/// cumulative timestamps printed at fixed precision. Deterministic:
/// the same dataset always produces the same bytes.
pub fn write_csv(d: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{CSV_HEADER}")?;
    for f in &d.flows {
        let mut ts = 0.0f64;
        for (i, (&s, &dl)) in f.sizes.iter().zip(&f.delays_ms).enumerate() {
            if i > 0 {
                ts += dl;
            }
            writeln!(w, "{},{:.9},{},{}", f.id, ts, s, f.label)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.display().to_string(), line, msg: msg.into() }
}

/// Reads a packet-row CSV back into a dataset. Delays are derived from
/// timestamp differences; the first packet of each flow gets delay 0.
/// Malformed rows fail with the offending line number.
pub fn ingest_csv(path: &Path, mode: Mode) -> Result<Dataset> {
    let file = File::open(path)?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 1, "empty file"))
        .and_then(|(i, l)| l.map(|l| (i, l)).map_err(Error::Io))?;
    if header.trim() != CSV_HEADER {
        return Err(parse_err(path, 1, format!("expected header {CSV_HEADER:?}")));
    }

    struct Pending {
        id: u64,
        sizes: Vec<i64>,
        ts: Vec<f64>,
        label: Label,
    }

    let max_unit = mode.max_unit();
    let mut flows: Vec<Flow> = Vec::new();
    let mut seen: std::collections::HashSet<u64> = std::collections::HashSet::new();
    let mut cur: Option<Pending> = None;

    let finish = |p: Pending, lineno: usize| -> Result<Flow> {
        let mut delays = Vec::with_capacity(p.ts.len());
        delays.push(0.0);
        for w in p.ts.windows(2) {
            let d = w[1] - w[0];
            if d < 0.0 {
                return Err(parse_err(path, lineno, "timestamps not monotone within flow"));
            }
            delays.push(d);
        }
        Flow::new(p.id, p.sizes, delays, p.label)
    };

    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let (a, b, c, d) = match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), Some(c), Some(d)) if parts.next().is_none() => (a, b, c, d),
            _ => return Err(parse_err(path, lineno, "expected 4 comma-separated fields")),
        };
        let id: u64 =
            a.trim().parse().map_err(|_| parse_err(path, lineno, format!("bad flow_id {a:?}")))?;
        let ts: f64 =
            b.trim().parse().map_err(|_| parse_err(path, lineno, format!("bad ts_ms {b:?}")))?;
        if !ts.is_finite() {
            return Err(parse_err(path, lineno, "non-finite ts_ms"));
        }
        let size: i64 =
            c.trim().parse().map_err(|_| parse_err(path, lineno, format!("bad size {c:?}")))?;
        if size == 0 {
            return Err(parse_err(path, lineno, "packet size 0 is invalid"));
        }
        if size.unsigned_abs() > max_unit as u64 {
            return Err(parse_err(
                path,
                lineno,
                format!("|size| {} exceeds {mode} max unit {max_unit}", size.unsigned_abs()),
            ));
        }
        let label = match d.trim() {
            "sensitive" => Label::Sensitive,
            "benign" => Label::Benign,
            other => return Err(parse_err(path, lineno, format!("unknown label {other:?}"))),
        };

        match cur.as_mut() {
            Some(p) if p.id == id => {
                if p.label != label {
                    return Err(parse_err(path, lineno, format!("flow {id}: label changes mid-flow")));
                }
                p.sizes.push(size);
                p.ts.push(ts);
            }
            _ => {
                if let Some(p) = cur.take() {
                    flows.push(finish(p, lineno)?);
                }
                if !seen.insert(id) {
                    return Err(parse_err(path, lineno, format!("flow {id} reappears after ending")));
                }
                cur = Some(Pending { id, sizes: vec![size], ts: vec![ts], label });
            }
        }
    }
    if let Some(p) = cur.take() {
        let last = p.ts.len();
        flows.push(finish(p, last)?);
    }
    if flows.is_empty() {
        return Err(parse_err(path, 1, "file contains no flows"));
    }
    Ok(Dataset { mode, flows, provenance: format!("external:{}", path.display()) })
}

// --- split -----------------------------------------------------------------

/// Stratified, seed-deterministic 40/40/10/10 split into
/// clf_train / attack_train / validation / test. Requires at least
/// 10 flows per class so every partition sees both classes.
pub fn split_dataset(d: &Dataset, seed: u64) -> Result<Splits> {
    for label in [Label::Sensitive, Label::Benign] {
        let n = d.count_label(label);
        if n < 10 {
            return Err(Error::Input(format!(
                "split needs >= 10 flows per class, found {n} {label}"
            )));
        }
    }
    let mut parts: [Vec<Flow>; 4] = [Vec::new(), Vec::new(), Vec::new(), Vec::new()];
    let mut rng = stream(seed, "split");
    for label in [Label::Sensitive, Label::Benign] {
        let mut idx: Vec<usize> = d
            .flows
            .iter()
            .enumerate()
            .filter(|(_, f)| f.label == label)
            .map(|(i, _)| i)
            .collect();
        idx.shuffle(&mut rng);
        let n = idx.len();
        let c0 = (n as f64 * 0.4).floor() as usize;
        let c1 = (n as f64 * 0.4).floor() as usize;
        let c2 = (n as f64 * 0.1).floor() as usize;
        let bounds = [0, c0, c0 + c1, c0 + c1 + c2, n];
        for p in 0..4 {
            for &i in &idx[bounds[p]..bounds[p + 1]] {
                parts[p].push(d.flows[i].clone());
            }
        }
    }
    // Deterministic order within each partition: by original flow id.
    for p in parts.iter_mut() {
        p.sort_by_key(|f| f.id);
    }
    let mk = |flows: Vec<Flow>, name: &str| Dataset {
        mode: d.mode,
        flows,
        provenance: format!("{} [{name} seed={seed}]", d.provenance),
    };
    let [p0, p1, p2, p3] = parts;
    Ok(Splits {
        clf_train: mk(p0, "clf_train"),
        attack_train: mk(p1, "attack_train"),
        validation: mk(p2, "validation"),
        test: mk(p3, "test"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn flow_invariants_are_enforced() {
        assert!(Flow::new(0, vec![], vec![], Label::Benign).is_err());
        assert!(Flow::new(0, vec![100], vec![0.0, 1.0], Label::Benign).is_err());
        assert!(Flow::new(0, vec![100, 0], vec![0.0, 1.0], Label::Benign).is_err());
        assert!(Flow::new(0, vec![100, 50], vec![1.0, 1.0], Label::Benign).is_err());
        assert!(Flow::new(0, vec![100, 50], vec![0.0, -1.0], Label::Benign).is_err());
        let f = Flow::new(0, vec![100, -50], vec![0.0, 2.5], Label::Sensitive).unwrap();
        assert_eq!(f.total_bytes(), 150);
        assert_eq!(f.duration_ms(), 2.5);
    }

    #[test]
    fn default_config_generates_valid_bounded_flows() {
        let cfg = GeneratorConfig::default();
        let d = generate_dataset(&cfg, 1).unwrap();
        assert_eq!(d.len(), cfg.n_flows);
        for f in &d.flows {
            f.check_bounds(cfg.mode.max_unit()).unwrap();
            assert!(f.len() >= cfg.min_len && f.len() <= cfg.max_len);
            assert_eq!(f.delays_ms[0], 0.0);
        }
    }

    #[test]
    fn sensitive_flows_are_cell_aligned() {
        // Default config, seed 1: every sensitive flow keeps >= 80% of
        // packets within +-24 bytes of a multiple of the cell size.
        let cfg = GeneratorConfig::default();
        let d = generate_dataset(&cfg, 1).unwrap();
        for f in d.flows.iter().filter(|f| f.label == Label::Sensitive) {
            let frac = cell_alignment_fraction(f, cfg.cell_size, 24);
            assert!(frac >= 0.8, "flow {} aligned fraction {frac}", f.id);
        }
    }

    #[test]
    fn threshold_rule_separates_classes() {
        // A 1-feature threshold on cell alignment recovers >= 95% of labels.
        let mut cfg = GeneratorConfig::default();
        cfg.n_flows = 1000;
        let d = generate_dataset(&cfg, 3).unwrap();
        let correct = d
            .flows
            .iter()
            .filter(|f| threshold_rule_label(f, cfg.cell_size, 24) == f.label)
            .count();
        assert!(
            correct as f64 / d.len() as f64 >= 0.95,
            "only {correct}/{} correct",
            d.len()
        );
    }

    #[test]
    fn generation_is_deterministic_and_seed_sensitive() {
        let cfg = GeneratorConfig::default();
        let a = generate_dataset(&cfg, 42).unwrap();
        let b = generate_dataset(&cfg, 42).unwrap();
        let c = generate_dataset(&cfg, 43).unwrap();
        assert_eq!(a.flows, b.flows);
        assert_ne!(a.flows, c.flows);
    }

    #[test]
    fn zero_drop_rate_injects_no_retransmissions() {
        let mut cfg = GeneratorConfig::default();
        cfg.drop_rate = 0.0;
        for i in 0..50 {
            let mut rng = indexed_stream(9, "flowgen", i);
            let (_, marks) = generate_flow_marked(&cfg, i, Label::Sensitive, &mut rng);
            assert!(marks.iter().all(|&m| !m));
        }
        // And with a positive rate, every injected packet duplicates its
        // predecessor's (size, direction).
        cfg.drop_rate = 0.1;
        let mut saw_retrans = false;
        for i in 0..50 {
            let mut rng = indexed_stream(9, "flowgen", i);
            let (f, marks) = generate_flow_marked(&cfg, i, Label::Benign, &mut rng);
            for (i, &m) in marks.iter().enumerate() {
                if m {
                    saw_retrans = true;
                    assert_eq!(f.sizes[i], f.sizes[i - 1]);
                }
            }
        }
        assert!(saw_retrans);
    }

    #[test]
    fn tls_mode_generates_larger_records() {
        let cfg = GeneratorConfig::for_mode(Mode::Tls);
        let d = generate_dataset(&cfg, 5).unwrap();
        for f in &d.flows {
            f.check_bounds(16384).unwrap();
        }
        let max_sensitive = d
            .flows
            .iter()
            .filter(|f| f.label == Label::Sensitive)
            .flat_map(|f| f.sizes.iter())
            .map(|s| s.unsigned_abs())
            .max()
            .unwrap();
        assert!(max_sensitive > 1460, "tls records should exceed tcp mss");
    }

    #[test]
    fn csv_round_trip_preserves_sizes_exactly_and_delays_closely() {
        let cfg = GeneratorConfig { n_flows: 30, ..GeneratorConfig::default() };
        let d = generate_dataset(&cfg, 11).unwrap();
        let dir = tmp();
        let path = dir.path().join("d.csv");
        write_csv(&d, &path).unwrap();
        let back = ingest_csv(&path, Mode::Tcp).unwrap();
        assert_eq!(back.len(), d.len());
        for (a, b) in d.flows.iter().zip(&back.flows) {
            assert_eq!(a.sizes, b.sizes);
            assert_eq!(a.label, b.label);
            for (x, y) in a.delays_ms.iter().zip(&b.delays_ms) {
                assert!((x - y).abs() < 1e-6, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn csv_write_is_byte_deterministic() {
        let cfg = GeneratorConfig { n_flows: 20, ..GeneratorConfig::default() };
        let d = generate_dataset(&cfg, 2).unwrap();
        let dir = tmp();
        let p1 = dir.path().join("a.csv");
        let p2 = dir.path().join("b.csv");
        write_csv(&d, &p1).unwrap();
        write_csv(&d, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn ingest_parses_delays_from_timestamps() {
        let dir = tmp();
        let path = dir.path().join("three.csv");
        let mut f = File::create(&path).unwrap();
        writeln!(f, "flow_id,ts_ms,size,label").unwrap();
        writeln!(f, "0,10.0,100,benign").unwrap();
        writeln!(f, "0,15.0,-200,benign").unwrap();
        writeln!(f, "0,19.0,300,benign").unwrap();
        drop(f);
        let d = ingest_csv(&path, Mode::Tcp).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.flows[0].delays_ms, vec![0.0, 5.0, 4.0]);
        assert_eq!(d.flows[0].sizes, vec![100, -200, 300]);
    }

    #[test]
    fn ingest_rejects_bad_inputs_with_line_numbers() {
        let dir = tmp();
        let write = |name: &str, body: &str| {
            let path = dir.path().join(name);
            std::fs::write(&path, body).unwrap();
            path
        };

        let empty = write("empty.csv", "flow_id,ts_ms,size,label\n");
        match ingest_csv(&empty, Mode::Tcp) {
            Err(Error::Parse { msg, .. }) => assert!(msg.contains("no flows")),
            other => panic!("expected parse error, got {other:?}"),
        }

        let zero = write(
            "zero.csv",
            "flow_id,ts_ms,size,label\n0,0.0,100,benign\n0,1.0,0,benign\n",
        );
        match ingest_csv(&zero, Mode::Tcp) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("size 0"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }

        let garbled = write(
            "garbled.csv",
            "flow_id,ts_ms,size,label\n0,0.0,100,benign\nnot-a-row\n",
        );
        match ingest_csv(&garbled, Mode::Tcp) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }

        let backwards = write(
            "backwards.csv",
            "flow_id,ts_ms,size,label\n0,5.0,100,benign\n0,1.0,200,benign\n",
        );
        assert!(matches!(ingest_csv(&backwards, Mode::Tcp), Err(Error::Parse { .. })));
    }

    #[test]
    fn split_is_stratified_40_40_10_10() {
        let cfg = GeneratorConfig { n_flows: 100, ..GeneratorConfig::default() };
        let d = generate_dataset(&cfg, 4).unwrap();
        assert_eq!(d.count_label(Label::Sensitive), 50);
        let s = split_dataset(&d, 7).unwrap();
        for (part, want) in [(&s.clf_train, 40), (&s.attack_train, 40), (&s.validation, 10), (&s.test, 10)] {
            assert_eq!(part.len(), want);
            assert_eq!(part.count_label(Label::Sensitive), want / 2);
        }
        // Same seed, same partition contents.
        let s2 = split_dataset(&d, 7).unwrap();
        assert_eq!(s.test.flows, s2.test.flows);
        // Partitions are disjoint and cover the dataset.
        let mut ids: Vec<u64> = [&s.clf_train, &s.attack_train, &s.validation, &s.test]
            .iter()
            .flat_map(|p| p.flows.iter().map(|f| f.id))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 100);
    }

    #[test]
    fn split_rejects_tiny_datasets() {
        let mut cfg = GeneratorConfig::default();
        cfg.n_flows = 4;
        let d = generate_dataset(&cfg, 1).unwrap();
        assert!(matches!(split_dataset(&d, 1), Err(Error::Input(_))));
    }
}
