//! Statistical feature vector over a flow (or flow prefix).
//!
//! 166 features in a fixed order, with a machine-readable manifest:
//!
//! * 102 series statistics: 3 direction views (fwd / bwd / all) x
//!   2 series (packet-size magnitudes, inter-arrival times) x 17 stats
//!   (count, sum, min, max, mean, median, std, variance, p10..p90);
//! * 10 burst features: per direction, number of bursts plus mean/max
//!   burst length (packets) and mean/max burst bytes, where a burst is
//!   a maximal run of same-direction packets;
//! * 7 flow-level features: duration, total packets, total bytes,
//!   fwd/bwd packet and byte ratios, packets/sec, bytes/sec;
//! * 47 second-order features: a 16-bin |size| histogram per direction
//!   (bin width max_unit/16) and the first 15 signed packet sizes.
//!
//! Degenerate statistics (empty series, zero denominators) are 0, never
//! NaN. Extraction is pure and deterministic.

use crate::flow::{Flow, Mode};
use crate::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

pub const N_FEATURES: usize = 166;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Packet,
    Timing,
}

#[derive(Debug, Clone)]
pub struct FeatureDef {
    pub index: usize,
    pub name: String,
    pub description: String,
    pub category: Category,
    /// True when multiplying all delays by c > 0 multiplies this feature by c.
    pub linear_in_time: bool,
}

const STAT_NAMES: [&str; 17] = [
    "count", "sum", "min", "max", "mean", "median", "std", "var", "p10", "p20", "p30", "p40",
    "p50", "p60", "p70", "p80", "p90",
];

/// 17 order statistics of a series. Empty input yields all zeros;
/// variance uses the population (1/n) convention.
fn series_stats(xs: &[f64]) -> [f64; 17] {
    let mut out = [0.0f64; 17];
    let n = xs.len();
    out[0] = n as f64;
    if n == 0 {
        return out;
    }
    let sum: f64 = xs.iter().sum();
    let mean = sum / n as f64;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pct = |p: f64| -> f64 {
        let q = p / 100.0 * (n - 1) as f64;
        let lo = q.floor() as usize;
        let frac = q - lo as f64;
        if lo + 1 < n {
            sorted[lo] + (sorted[lo + 1] - sorted[lo]) * frac
        } else {
            sorted[n - 1]
        }
    };
    out[1] = sum;
    out[2] = sorted[0];
    out[3] = sorted[n - 1];
    out[4] = mean;
    out[5] = pct(50.0);
    out[6] = var.sqrt();
    out[7] = var;
    for (i, p) in (10..=90).step_by(10).enumerate() {
        out[8 + i] = pct(p as f64);
    }
    out
}

struct Burst {
    packets: usize,
    bytes: u64,
}

/// Maximal same-direction runs for one direction (fwd = positive sizes).
fn bursts(sizes: &[i64], fwd: bool) -> Vec<Burst> {
    let mut out = Vec::new();
    let mut cur: Option<Burst> = None;
    for &s in sizes {
        let is_dir = (s > 0) == fwd;
        if is_dir {
            let b = cur.get_or_insert(Burst { packets: 0, bytes: 0 });
            b.packets += 1;
            b.bytes += s.unsigned_abs();
        } else if let Some(b) = cur.take() {
            out.push(b);
        }
    }
    if let Some(b) = cur.take() {
        out.push(b);
    }
    out
}

const VIEWS: [&str; 3] = ["fwd", "bwd", "all"];
const SERIES: [&str; 2] = ["size", "iat"];

/// Computes feature vectors for flows under one size ceiling (the
/// histogram bin width depends on it).
#[derive(Debug, Clone, Copy)]
pub struct FeatureExtractor {
    pub max_unit: u32,
}

impl FeatureExtractor {
    pub fn new(max_unit: u32) -> Self {
        FeatureExtractor { max_unit }
    }

    pub fn for_mode(mode: Mode) -> Self {
        FeatureExtractor { max_unit: mode.max_unit() }
    }

    pub fn extract(&self, f: &Flow) -> Vec<f64> {
        let mut v = Vec::with_capacity(N_FEATURES);
        let n = f.len();
        let ts: Vec<f64> = f
            .delays_ms
            .iter()
            .scan(0.0, |acc, d| {
                *acc += d;
                Some(*acc)
            })
            .collect();

        // View index sets share one code path so fwd/bwd stay symmetric.
        let idx_of = |pred: &dyn Fn(i64) -> bool| -> Vec<usize> {
            (0..n).filter(|&i| pred(f.sizes[i])).collect()
        };
        let views: [Vec<usize>; 3] =
            [idx_of(&|s| s > 0), idx_of(&|s| s < 0), (0..n).collect()];

        for idx in &views {
            let size_series: Vec<f64> =
                idx.iter().map(|&i| f.sizes[i].unsigned_abs() as f64).collect();
            let iat_series: Vec<f64> =
                idx.windows(2).map(|w| ts[w[1]] - ts[w[0]]).collect();
            for series in [&size_series, &iat_series] {
                v.extend_from_slice(&series_stats(series));
            }
        }

        // Bursts per direction.
        for fwd in [true, false] {
            let bs = bursts(&f.sizes, fwd);
            if bs.is_empty() {
                v.extend_from_slice(&[0.0; 5]);
            } else {
                let k = bs.len() as f64;
                let lens: Vec<f64> = bs.iter().map(|b| b.packets as f64).collect();
                let bytes: Vec<f64> = bs.iter().map(|b| b.bytes as f64).collect();
                v.push(k);
                v.push(lens.iter().sum::<f64>() / k);
                v.push(lens.iter().cloned().fold(0.0, f64::max));
                v.push(bytes.iter().sum::<f64>() / k);
                v.push(bytes.iter().cloned().fold(0.0, f64::max));
            }
        }

        // Flow-level.
        let duration = ts[n - 1] - ts[0];
        let n_fwd = views[0].len() as f64;
        let n_bwd = views[1].len() as f64;
        let bytes_fwd: f64 = views[0].iter().map(|&i| f.sizes[i].unsigned_abs() as f64).sum();
        let bytes_bwd: f64 = views[1].iter().map(|&i| f.sizes[i].unsigned_abs() as f64).sum();
        let total_bytes = bytes_fwd + bytes_bwd;
        v.push(duration);
        v.push(n as f64);
        v.push(total_bytes);
        v.push(if n_bwd > 0.0 { n_fwd / n_bwd } else { 0.0 });
        v.push(if bytes_bwd > 0.0 { bytes_fwd / bytes_bwd } else { 0.0 });
        v.push(if duration > 0.0 { n as f64 / (duration / 1000.0) } else { 0.0 });
        v.push(if duration > 0.0 { total_bytes / (duration / 1000.0) } else { 0.0 });

        // Second order: per-direction 16-bin |size| histogram (counts).
        for view in [&views[0], &views[1]] {
            let mut hist = [0.0f64; 16];
            for &i in view.iter() {
                let a = f.sizes[i].unsigned_abs() as f64;
                let bin = ((a * 16.0 / self.max_unit as f64).floor() as usize).min(15);
                hist[bin] += 1.0;
            }
            v.extend_from_slice(&hist);
        }
        // First 15 signed sizes, zero-padded.
        for i in 0..15 {
            v.push(if i < n { f.sizes[i] as f64 } else { 0.0 });
        }

        debug_assert_eq!(v.len(), N_FEATURES);
        v
    }
}

/// The canonical feature manifest; entry order matches
/// [`FeatureExtractor::extract`] exactly.
pub fn manifest() -> Vec<FeatureDef> {
    let mut defs: Vec<FeatureDef> = Vec::with_capacity(N_FEATURES);
    let mut push = |name: String, description: String, category: Category, lit: bool| {
        let index = defs.len();
        defs.push(FeatureDef { index, name, description, category, linear_in_time: lit });
    };

    for view in VIEWS {
        let scope = match view {
            "fwd" => "positive-size (client-to-server) packets",
            "bwd" => "negative-size (server-to-client) packets",
            _ => "all packets",
        };
        for series in SERIES {
            for stat in STAT_NAMES {
                let (name, desc, cat, lit) = match series {
                    "size" => {
                        let name = if stat == "count" {
                            format!("{view}_pkt_count")
                        } else {
                            format!("{view}_size_{stat}")
                        };
                        let desc = if stat == "count" {
                            format!("number of {scope}")
                        } else {
                            format!("{stat} of |size| over {scope}")
                        };
                        (name, desc, Category::Packet, false)
                    }
                    _ => {
                        let name = format!("{view}_iat_{stat}");
                        let desc =
                            format!("{stat} of inter-arrival gaps (ms) between {scope}");
                        // count scales with packets, variance with c^2;
                        // everything else is linear in time.
                        let lit = stat != "count" && stat != "var";
                        (name, desc, Category::Timing, lit)
                    }
                };
                push(name, desc, cat, lit);
            }
        }
    }

    for dir in ["fwd", "bwd"] {
        let scope = if dir == "fwd" { "client-to-server" } else { "server-to-client" };
        push(
            format!("{dir}_burst_count"),
            format!("number of maximal {scope} packet runs"),
            Category::Packet,
            false,
        );
        push(format!("{dir}_burst_len_mean"), format!("mean {scope} burst length in packets"), Category::Packet, false);
        push(format!("{dir}_burst_len_max"), format!("max {scope} burst length in packets"), Category::Packet, false);
        push(format!("{dir}_burst_bytes_mean"), format!("mean {scope} burst payload in bytes"), Category::Packet, false);
        push(format!("{dir}_burst_bytes_max"), format!("max {scope} burst payload in bytes"), Category::Packet, false);
    }

    push("duration_ms".into(), "last minus first packet timestamp (ms)".into(), Category::Timing, true);
    push("total_pkts".into(), "packet count".into(), Category::Packet, false);
    push("total_bytes".into(), "sum of |size| over all packets".into(), Category::Packet, false);
    push("ratio_fwd_bwd_pkts".into(), "fwd/bwd packet count ratio (0 when no bwd)".into(), Category::Packet, false);
    push("ratio_fwd_bwd_bytes".into(), "fwd/bwd byte ratio (0 when no bwd)".into(), Category::Packet, false);
    push("pkts_per_sec".into(), "packets per second (0 for zero duration)".into(), Category::Timing, false);
    push("bytes_per_sec".into(), "bytes per second (0 for zero duration)".into(), Category::Timing, false);

    for dir in ["fwd", "bwd"] {
        for bin in 0..16 {
            push(
                format!("{dir}_size_hist_{bin:02}"),
                format!("{dir} packet count with |size| in histogram bin {bin} (width max_unit/16)"),
                Category::Packet,
                false,
            );
        }
    }
    for i in 1..=15 {
        push(
            format!("pkt_size_{i:02}"),
            format!("signed size of packet {i} (0 when flow is shorter)"),
            Category::Packet,
            false,
        );
    }

    debug_assert_eq!(defs.len(), N_FEATURES);
    defs
}

/// Writes the manifest as `index,name,description` (the description
/// carries the linear-in-time tag so the CSV stays three columns).
pub fn write_manifest_csv(path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "index,name,description").unwrap();
    for d in manifest() {
        let mut desc = d.description.clone();
        if d.linear_in_time {
            desc.push_str("; linear-in-time");
        }
        if desc.contains(',') || desc.contains('"') {
            desc = format!("\"{}\"", desc.replace('"', "\"\""));
        }
        writeln!(out, "{},{},{}", d.index, d.name, desc).unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Index lookup by feature name.
pub fn feature_index(name: &str) -> Result<usize> {
    manifest()
        .iter()
        .position(|d| d.name == name)
        .ok_or_else(|| Error::Input(format!("unknown feature {name:?}")))
}
