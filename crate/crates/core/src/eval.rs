//! Attack measurement and analysis: success rates and overheads of a
//! shaping policy against a censor, cross-censor transfer matrices,
//! reward-mask sweeps, score ECDFs, per-flow action mixes, tree feature
//! importances, and offline replay of stored adversarial shapes.

use crate::agent::{run_episode, train_amoeba, AgentConfig, PolicyBundle};
use crate::censor::{decide, CensorModel, PrefixScorer};
use crate::encoder::StateEncoder;
use crate::env::{EnvConfig, FnScorer, StepKind, StepRecord};
use crate::features::{manifest, Category};
use crate::flow::Flow;
use crate::rng::stream;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Which actor drives the evaluation episodes.
pub enum EvalPolicy<'a> {
    Trained(&'a PolicyBundle),
    /// Emits every packet unchanged; the no-attack baseline.
    Identity,
}

/// One evaluated flow. The adversarial flow itself is kept for reuse
/// (transfer scoring, profile building) but not serialized.
#[derive(Debug, Clone, Serialize)]
pub struct FlowEval {
    pub id: u64,
    /// Complete-flow censor decision: true = permitted.
    pub permitted: bool,
    /// Censor score of the complete adversarial flow.
    pub score: f64,
    /// Some proper emitted prefix was blocked along the way.
    pub early_block: bool,
    pub steps: usize,
    pub truncations: usize,
    pub paddings: usize,
    /// Steps that added at least 1 ms of delay.
    pub delay_actions: usize,
    pub original_bytes: u64,
    pub padding_bytes: u64,
    pub original_duration_ms: f64,
    pub added_delay_ms: f64,
    #[serde(skip)]
    pub adversarial: Flow,
}

#[derive(Debug, Clone, Serialize)]
pub struct AttackReport {
    /// Fraction of complete adversarial flows the censor permits.
    pub asr: f64,
    /// Padding bytes over transmitted bytes, aggregated over all flows.
    pub data_overhead: f64,
    /// Added delay over total transmission time, aggregated.
    pub time_overhead: f64,
    /// Fraction of flows with a blocked proper prefix (reported apart
    /// from asr: a censor acting mid-flow would cut these).
    pub early_block_rate: f64,
    pub n_flows: usize,
    pub flows: Vec<FlowEval>,
}

/// Aggregate overheads from per-flow (padding, transmitted, added,
/// duration) sums: extra / (extra + base) on the summed quantities.
fn ratio(extra: f64, base: f64) -> f64 {
    if extra <= 0.0 {
        0.0
    } else {
        extra / (extra + base)
    }
}

/// Runs each flow through the environment with deterministic actions
/// and no reward masking, then scores the complete emitted flows.
pub fn measure_attack(
    policy: &EvalPolicy,
    scorer: &dyn PrefixScorer,
    env_cfg: &EnvConfig,
    flows: &[Flow],
) -> Result<AttackReport> {
    if flows.is_empty() {
        return Err(Error::Input("cannot evaluate an empty flow set".into()));
    }
    let mut cfg = env_cfg.clone();
    cfg.p_mask = 0.0;

    let mut evals = Vec::with_capacity(flows.len());
    let (mut pad_sum, mut byte_sum) = (0.0f64, 0.0f64);
    let (mut add_sum, mut dur_sum) = (0.0f64, 0.0f64);
    for flow in flows {
        let ev = match policy {
            EvalPolicy::Trained(bundle) => {
                let outcome = run_episode(bundle, scorer, &cfg, flow.clone())?;
                eval_one(flow, outcome.adversarial, outcome.steps, &outcome.records, scorer)?
            }
            EvalPolicy::Identity => {
                let mut early = false;
                for t in 1..flow.len() {
                    if decide(scorer.score_prefix(&flow.sizes[..t], &flow.delays_ms[..t])?) == 0 {
                        early = true;
                        break;
                    }
                }
                let score = scorer.score_prefix(&flow.sizes, &flow.delays_ms)?;
                FlowEval {
                    id: flow.id,
                    permitted: decide(score) == 1,
                    score,
                    early_block: early,
                    steps: flow.len(),
                    truncations: 0,
                    paddings: 0,
                    delay_actions: 0,
                    original_bytes: flow.sizes.iter().map(|s| s.unsigned_abs()).sum(),
                    padding_bytes: 0,
                    original_duration_ms: flow.delays_ms.iter().sum(),
                    added_delay_ms: 0.0,
                    adversarial: flow.clone(),
                }
            }
        };
        pad_sum += ev.padding_bytes as f64;
        byte_sum += ev.original_bytes as f64;
        add_sum += ev.added_delay_ms;
        dur_sum += ev.original_duration_ms;
        evals.push(ev);
    }

    let n = evals.len();
    Ok(AttackReport {
        asr: evals.iter().filter(|e| e.permitted).count() as f64 / n as f64,
        data_overhead: ratio(pad_sum, byte_sum),
        time_overhead: ratio(add_sum, dur_sum),
        early_block_rate: evals.iter().filter(|e| e.early_block).count() as f64 / n as f64,
        n_flows: n,
        flows: evals,
    })
}

fn eval_one(
    original: &Flow,
    adversarial: Flow,
    steps: usize,
    records: &[StepRecord],
    scorer: &dyn PrefixScorer,
) -> Result<FlowEval> {
    let orig_bytes: u64 = original.sizes.iter().map(|s| s.unsigned_abs()).sum();
    let adv_bytes: u64 = adversarial.sizes.iter().map(|s| s.unsigned_abs()).sum();
    let orig_dur: f64 = original.delays_ms.iter().sum();
    let adv_dur: f64 = adversarial.delays_ms.iter().sum();
    let score = scorer.score_prefix(&adversarial.sizes, &adversarial.delays_ms)?;
    // The terminal step's scored prefix IS the complete flow unless the
    // step cap flushed extra packets after it; only proper prefixes
    // count as early blocks.
    let flushed = adversarial.len() > steps;
    let early_block = records
        .iter()
        .any(|r| decide(r.score) == 0 && !(r.terminal && !flushed));
    Ok(FlowEval {
        id: original.id,
        permitted: decide(score) == 1,
        score,
        early_block,
        steps,
        truncations: records.iter().filter(|r| r.kind == StepKind::Truncation).count(),
        paddings: records.iter().filter(|r| r.kind == StepKind::Padding).count(),
        delay_actions: records.iter().filter(|r| r.added_delay_ms >= 1.0).count(),
        original_bytes: orig_bytes,
        padding_bytes: adv_bytes - orig_bytes,
        original_duration_ms: orig_dur,
        added_delay_ms: adv_dur - orig_dur,
        adversarial,
    })
}

/// Cross-censor transfer: cell (i, j) is the ASR of flows generated by
/// policy i when scored by censor j. Adversarial flows are generated
/// once per policy and reused across the row; with deterministic
/// evaluation the trajectory is independent of the scorer, so the
/// diagonal reproduces `measure_attack` exactly.
#[derive(Debug, Clone, Serialize)]
pub struct TransferMatrix {
    pub sources: Vec<String>,
    pub targets: Vec<String>,
    /// Row-major: asr[i][j] = flows from policy i scored by censor j.
    pub asr: Vec<Vec<f64>>,
}

pub fn transfer_matrix(
    policies: &[(String, &PolicyBundle)],
    censors: &[(String, &dyn PrefixScorer)],
    env_cfg: &EnvConfig,
    flows: &[Flow],
) -> Result<TransferMatrix> {
    if policies.is_empty() || censors.is_empty() {
        return Err(Error::Input("transfer matrix needs policies and censors".into()));
    }
    if flows.is_empty() {
        return Err(Error::Input("cannot evaluate an empty flow set".into()));
    }
    let mut cfg = env_cfg.clone();
    cfg.p_mask = 0.0;
    let neutral = FnScorer(|_: &[i64], _: &[f64]| 1.0);

    let mut asr = Vec::with_capacity(policies.len());
    for (_, bundle) in policies {
        let adversarial: Vec<Flow> = flows
            .iter()
            .map(|f| Ok(run_episode(bundle, &neutral, &cfg, f.clone())?.adversarial))
            .collect::<Result<_>>()?;
        let mut row = Vec::with_capacity(censors.len());
        for (_, censor) in censors {
            let permitted = adversarial
                .iter()
                .map(|a| Ok(decide(censor.score_prefix(&a.sizes, &a.delays_ms)?) as usize))
                .sum::<Result<usize>>()?;
            row.push(permitted as f64 / adversarial.len() as f64);
        }
        asr.push(row);
    }
    Ok(TransferMatrix {
        sources: policies.iter().map(|(n, _)| n.clone()).collect(),
        targets: censors.iter().map(|(n, _)| n.clone()).collect(),
        asr,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MaskPoint {
    pub rate: f64,
    pub mean_asr: f64,
    pub std_asr: f64,
    /// Censor queries actually answered: timesteps * (1 - rate).
    pub queries: usize,
    pub asrs: Vec<f64>,
}

/// Trains one agent per (mask rate, repeat) at an equal timestep budget
/// and reports the post-training ASR on held-out flows. Fresh actor and
/// critic per run; the pretrained encoder is shared (cloned, frozen).
#[allow(clippy::too_many_arguments)]
pub fn mask_sweep(
    scorer: &dyn PrefixScorer,
    env_cfg: &EnvConfig,
    encoder: &StateEncoder,
    agent_cfg: &AgentConfig,
    train_flows: &[Flow],
    probe_flows: &[Flow],
    eval_flows: &[Flow],
    rates: &[f64],
    repeats: usize,
) -> Result<Vec<MaskPoint>> {
    if rates.iter().any(|r| !(0.0..1.0).contains(r)) {
        return Err(Error::Config("mask rates must lie in [0, 1)".into()));
    }
    if repeats == 0 {
        return Err(Error::Config("mask sweep needs at least one repeat".into()));
    }
    let mut points = Vec::with_capacity(rates.len());
    for &rate in rates {
        let mut env = env_cfg.clone();
        env.p_mask = rate;
        let mut asrs = Vec::with_capacity(repeats);
        let mut queries = 0usize;
        for rep in 0..repeats {
            let mut cfg = agent_cfg.clone();
            cfg.seed = agent_cfg.seed.wrapping_add(rep as u64);
            let mut init = stream(cfg.seed, "mask-sweep-init");
            let mut bundle = PolicyBundle::new(encoder.clone(), cfg, &mut init)?;
            let stats = train_amoeba(scorer, &env, train_flows, probe_flows, &mut bundle)?;
            let spent = stats.last().map(|s| s.timesteps).unwrap_or(0);
            queries = (spent as f64 * (1.0 - rate)).round() as usize;
            let report =
                measure_attack(&EvalPolicy::Trained(&bundle), scorer, env_cfg, eval_flows)?;
            asrs.push(report.asr);
        }
        let mean = asrs.iter().sum::<f64>() / asrs.len() as f64;
        let var = asrs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / asrs.len() as f64;
        points.push(MaskPoint { rate, mean_asr: mean, std_asr: var.sqrt(), queries, asrs });
    }
    Ok(points)
}

/// Empirical CDF of censor scores over the successful flows of a
/// report: (score, fraction of successful flows scoring <= it).
pub fn score_ecdf(report: &AttackReport) -> Vec<(f64, f64)> {
    let mut scores: Vec<f64> =
        report.flows.iter().filter(|e| e.permitted).map(|e| e.score).collect();
    scores.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
    let n = scores.len();
    scores.into_iter().enumerate().map(|(i, s)| (s, (i + 1) as f64 / n as f64)).collect()
}

/// Per-flow action-count histograms: how many flows took exactly k
/// truncations, paddings, or delay actions.
#[derive(Debug, Clone, Serialize)]
pub struct ActionMix {
    /// (count per flow, number of flows) sorted by count.
    pub truncations: Vec<(usize, usize)>,
    pub paddings: Vec<(usize, usize)>,
    pub delays: Vec<(usize, usize)>,
}

pub fn action_mix(report: &AttackReport) -> ActionMix {
    let hist = |get: &dyn Fn(&FlowEval) -> usize| -> Vec<(usize, usize)> {
        let mut map = std::collections::BTreeMap::new();
        for e in &report.flows {
            *map.entry(get(e)).or_insert(0usize) += 1;
        }
        map.into_iter().collect()
    };
    ActionMix {
        truncations: hist(&|e| e.truncations),
        paddings: hist(&|e| e.paddings),
        delays: hist(&|e| e.delay_actions),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RankedFeature {
    pub name: String,
    pub importance: f64,
    pub is_packet: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct FeatureImportanceReport {
    pub top: Vec<RankedFeature>,
    pub packet_count: usize,
    pub timing_count: usize,
}

/// Top-k impurity-decrease importances of a tree censor, tallied into
/// packet-shape vs timing features via the feature manifest.
pub fn feature_importance_report(model: &CensorModel, k: usize) -> Result<FeatureImportanceReport> {
    let imps = model.importances()?;
    let defs = manifest();
    if k == 0 || k > defs.len() {
        return Err(Error::Input(format!("k must lie in 1..={}, got {k}", defs.len())));
    }
    let mut order: Vec<usize> = (0..imps.len()).collect();
    // Stable tie-break on index keeps the report deterministic.
    order.sort_by(|&a, &b| imps[b].partial_cmp(&imps[a]).unwrap().then(a.cmp(&b)));
    let top: Vec<RankedFeature> = order[..k]
        .iter()
        .map(|&i| RankedFeature {
            name: defs[i].name.clone(),
            importance: imps[i],
            is_packet: defs[i].category == Category::Packet,
        })
        .collect();
    let packet_count = top.iter().filter(|f| f.is_packet).count();
    Ok(FeatureImportanceReport { timing_count: top.len() - packet_count, packet_count, top })
}

/// The shape of one successful adversarial flow: what gets replayed,
/// with dummy bytes standing in for payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdversarialProfile {
    pub sizes: Vec<i64>,
    pub delays_ms: Vec<f64>,
    /// Censor the profile was recorded against.
    pub source: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileStore {
    pub profiles: Vec<AdversarialProfile>,
}

impl ProfileStore {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Input(format!("profile store serialization: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ProfileStore> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Parse { path: path.display().to_string(), line: 0, msg: e.to_string() })
    }
}

/// Stores the shape of every successful flow in the report.
pub fn build_profiles(report: &AttackReport, source: &str) -> Result<ProfileStore> {
    let profiles: Vec<AdversarialProfile> = report
        .flows
        .iter()
        .filter(|e| e.permitted)
        .map(|e| AdversarialProfile {
            sizes: e.adversarial.sizes.clone(),
            delays_ms: e.adversarial.delays_ms.clone(),
            source: source.to_string(),
        })
        .collect();
    if profiles.is_empty() {
        return Err(Error::Input("no successful flows to store as profiles".into()));
    }
    Ok(ProfileStore { profiles })
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplayReport {
    /// Fraction of flows whose every connection the censor permits.
    pub asr: f64,
    pub data_overhead: f64,
    pub time_overhead: f64,
    pub mean_connections: f64,
    pub n_flows: usize,
}

/// Replays each flow's payload through stored profiles: profiles are
/// consumed whole, in order (cycling), each as one connection; slots the
/// payload cannot fill carry dummy bytes. Overheads follow from the
/// fixed profile shapes rather than the original schedule.
pub fn replay_profiles(
    store: &ProfileStore,
    scorer: &dyn PrefixScorer,
    flows: &[Flow],
) -> Result<ReplayReport> {
    if store.profiles.is_empty() {
        return Err(Error::Input("profile store is empty".into()));
    }
    if flows.is_empty() {
        return Err(Error::Input("cannot replay an empty flow set".into()));
    }
    // Score each profile once; connections reuse the verdicts.
    let verdicts: Vec<bool> = store
        .profiles
        .iter()
        .map(|p| Ok(decide(scorer.score_prefix(&p.sizes, &p.delays_ms)?) == 1))
        .collect::<Result<_>>()?;

    let mut permitted_flows = 0usize;
    let mut connections = 0usize;
    let (mut dummy_sum, mut payload_sum) = (0.0f64, 0.0f64);
    let (mut add_sum, mut dur_sum) = (0.0f64, 0.0f64);
    for flow in flows {
        let mut fwd: u64 = flow.sizes.iter().filter(|&&s| s > 0).map(|s| s.unsigned_abs()).sum();
        let mut bwd: u64 = flow.sizes.iter().filter(|&&s| s < 0).map(|s| s.unsigned_abs()).sum();
        payload_sum += (fwd + bwd) as f64;
        let orig_dur: f64 = flow.delays_ms.iter().sum();

        let mut all_pass = true;
        let mut replay_dur = 0.0f64;
        let mut dummy = 0.0f64;
        let mut used = 0usize;
        let mut idx = 0usize;
        while fwd > 0 || bwd > 0 {
            if idx % store.profiles.len() == 0 && idx > 0 {
                return Err(Error::Input(
                    "profiles cannot carry the payload: a full pass made no progress".into(),
                ));
            }
            let before = fwd + bwd;
            while (fwd > 0 || bwd > 0) && idx < store.profiles.len() {
                let p = &store.profiles[idx];
                idx += 1;
                used += 1;
                all_pass &= verdicts[idx - 1];
                replay_dur += p.delays_ms.iter().sum::<f64>();
                for &s in &p.sizes {
                    let cap = s.unsigned_abs();
                    let taken = if s > 0 { cap.min(fwd) } else { cap.min(bwd) };
                    if s > 0 {
                        fwd -= taken;
                    } else {
                        bwd -= taken;
                    }
                    dummy += (cap - taken) as f64;
                }
            }
            if fwd > 0 || bwd > 0 {
                if fwd + bwd == before {
                    return Err(Error::Input(
                        "profiles cannot carry the payload: a full pass made no progress".into(),
                    ));
                }
                idx = 0;
            }
        }
        connections += used;
        permitted_flows += all_pass as usize;
        dummy_sum += dummy;
        let added = (replay_dur - orig_dur).max(0.0);
        add_sum += added;
        dur_sum += orig_dur;
    }

    Ok(ReplayReport {
        asr: permitted_flows as f64 / flows.len() as f64,
        data_overhead: ratio(dummy_sum, payload_sum),
        time_overhead: ratio(add_sum, dur_sum),
        mean_connections: connections as f64 / flows.len() as f64,
        n_flows: flows.len(),
    })
}
