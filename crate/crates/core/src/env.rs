//! The transport-layer emulator and reward engine. An episode walks an
//! original flow packet by packet; each action emits one (possibly
//! truncated or padded) packet, the censor scores the emitted prefix,
//! and the reward combines the censor decision with data- and
//! time-overhead penalties.
//!
//! Two hard guarantees hold for every episode, by construction:
//!   1. per original packet, emitted bytes sum to at least the original
//!      payload (truncation never loses bytes, padding only adds), and
//!   2. the first sub-packet of each original packet keeps at least the
//!      original delay; later sub-packets add non-negative delay.

use crate::censor::{decide, PrefixScorer};
use crate::flow::{Flow, Mode};
use crate::rng::{stream, Rng};
use crate::{Error, Result};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Observation {
    /// Remaining bytes of the current original packet / max_unit,
    /// signed by direction; magnitude in (0, 1].
    pub pending_size: f64,
    /// Original delay of the current packet / max_delay, clamped to
    /// [0, 1]; zero for sub-packets after a truncation.
    pub base_delay: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ShapeAction {
    /// Emitted size fraction in [-1, 1]; the sign is overridden by the
    /// pending payload's direction.
    pub size_frac: f64,
    /// Extra delay as a fraction of max_delay, in [0, 1].
    pub delta_delay_frac: f64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct RewardBreakdown {
    /// Censor decision on the emitted prefix (1 = permitted), or 0.5
    /// when masked.
    pub r_adv: f64,
    pub p_data: f64,
    pub p_time: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Truncation,
    Pass,
    Padding,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StepInfo {
    pub emitted_size: i64,
    pub emitted_delay_ms: f64,
    /// Delay added on top of the original schedule, discretized to ms.
    pub added_delay_ms: f64,
    pub kind: StepKind,
    pub score: f64,
    pub masked: bool,
    pub terminal: bool,
    /// Original packets appended verbatim when the step cap fired.
    pub flushed: usize,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    /// None once the episode is over.
    pub obs: Option<Observation>,
    pub reward: RewardBreakdown,
    pub info: StepInfo,
}

/// One JSON-lines record per step.
#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub pending_size: f64,
    pub base_delay: f64,
    pub size_frac: f64,
    pub delta_delay_frac: f64,
    pub emitted_size: i64,
    pub emitted_delay_ms: f64,
    pub added_delay_ms: f64,
    pub kind: StepKind,
    pub score: f64,
    pub masked: bool,
    pub r_adv: f64,
    pub p_data: f64,
    pub p_time: f64,
    pub total: f64,
    pub terminal: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub mode: Mode,
    pub max_delay_ms: f64,
    pub lambda_split: f64,
    pub lambda_data: f64,
    pub lambda_time: f64,
    /// Probability that a step's censor feedback is masked to 0.5.
    pub p_mask: f64,
    /// Episode step cap as a multiple of the original flow length.
    pub max_steps_factor: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig::for_mode(Mode::Tcp)
    }
}

impl EnvConfig {
    pub fn for_mode(mode: Mode) -> Self {
        EnvConfig {
            mode,
            max_delay_ms: 500.0,
            lambda_split: 0.05,
            lambda_data: match mode {
                Mode::Tcp => 0.2,
                Mode::Tls => 2.0,
            },
            lambda_time: 0.2,
            p_mask: 0.0,
            max_steps_factor: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lambda_split < 0.0 || self.lambda_data < 0.0 || self.lambda_time < 0.0 {
            return Err(Error::Config("penalty weights must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.p_mask) {
            return Err(Error::Config("p_mask must lie in [0,1]".into()));
        }
        if self.max_delay_ms <= 0.0 || self.max_steps_factor == 0 {
            return Err(Error::Config("max_delay and max_steps_factor must be positive".into()));
        }
        Ok(())
    }
}

/// floor with a tiny epsilon so exact fractions (k / scale) survive the
/// round trip through f64 multiplication.
fn discretize(frac: f64, scale: f64) -> i64 {
    (frac * scale + 1e-9).floor() as i64
}

pub struct ShapingEnv<'a> {
    scorer: &'a dyn PrefixScorer,
    pub cfg: EnvConfig,
    mask_rng: Rng,
    flow: Option<Flow>,
    cursor: usize,
    /// Unsent bytes of the current original packet (magnitude).
    remaining: i64,
    /// True when the next emission starts a new original packet.
    first_sub: bool,
    trunc_n: usize,
    steps: usize,
    max_steps: usize,
    emitted_sizes: Vec<i64>,
    emitted_delays: Vec<f64>,
    any_emitted: bool,
    terminal: bool,
}

impl<'a> ShapingEnv<'a> {
    pub fn new(scorer: &'a dyn PrefixScorer, cfg: EnvConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(ShapingEnv {
            scorer,
            cfg,
            mask_rng: stream(seed, "reward-mask"),
            flow: None,
            cursor: 0,
            remaining: 0,
            first_sub: true,
            trunc_n: 0,
            steps: 0,
            max_steps: 0,
            emitted_sizes: Vec::new(),
            emitted_delays: Vec::new(),
            any_emitted: false,
            terminal: true,
        })
    }

    pub fn max_unit(&self) -> u32 {
        self.cfg.mode.max_unit()
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    pub fn original(&self) -> Option<&Flow> {
        self.flow.as_ref()
    }

    fn observation(&self) -> Observation {
        let flow = self.flow.as_ref().expect("active episode");
        let signum = flow.sizes[self.cursor].signum() as f64;
        let base = if self.first_sub {
            (flow.delays_ms[self.cursor] / self.cfg.max_delay_ms).clamp(0.0, 1.0)
        } else {
            0.0
        };
        Observation {
            pending_size: signum * self.remaining as f64 / self.max_unit() as f64,
            base_delay: base,
        }
    }

    /// Starts a new episode on `flow` and returns the first observation.
    pub fn reset(&mut self, flow: Flow) -> Result<Observation> {
        flow.check_bounds(self.max_unit())?;
        self.max_steps = self.cfg.max_steps_factor * flow.len();
        self.cursor = 0;
        self.remaining = flow.sizes[0].abs();
        self.first_sub = true;
        self.trunc_n = 0;
        self.steps = 0;
        self.emitted_sizes.clear();
        self.emitted_delays.clear();
        self.any_emitted = false;
        self.terminal = false;
        self.flow = Some(flow);
        Ok(self.observation())
    }

    pub fn step(&mut self, action: ShapeAction) -> Result<StepResult> {
        if self.terminal || self.flow.is_none() {
            return Err(Error::Env("step called on a finished episode".into()));
        }
        let mu = self.max_unit() as i64;
        let size_frac = action.size_frac.clamp(-1.0, 1.0);
        let delta = action.delta_delay_frac.clamp(0.0, 1.0);

        // The first emitted packet of the episode keeps delay 0: flows
        // start at time zero, and shifting the whole flow is invisible
        // to the censor, so the action's delay is a no-op there.
        let delta_eff = if self.any_emitted { delta } else { 0.0 };

        let flow_len;
        let (emitted_size, emitted_delay, added_ms, kind, p_data);
        {
            let flow = self.flow.as_ref().expect("active episode");
            flow_len = flow.len();
            let dir = flow.sizes[self.cursor].signum();
            let mag = discretize(size_frac.abs(), mu as f64).max(1);
            let base_ms = if self.first_sub { flow.delays_ms[self.cursor] } else { 0.0 };
            added_ms = discretize(delta_eff, self.cfg.max_delay_ms).max(0) as f64;
            emitted_size = dir * mag;
            emitted_delay = base_ms + added_ms;

            if mag < self.remaining {
                // Truncation: payload stays pending; no new payload is read.
                self.remaining -= mag;
                self.trunc_n += 1;
                self.first_sub = false;
                kind = StepKind::Truncation;
                p_data = self.remaining as f64 / mu as f64
                    + self.cfg.lambda_split * self.trunc_n as f64;
            } else {
                // The packet completes; anything beyond the pending payload is padding.
                let padding = mag - self.remaining;
                kind = if padding == 0 { StepKind::Pass } else { StepKind::Padding };
                p_data = padding as f64 / mu as f64;
                self.cursor += 1;
                self.trunc_n = 0;
                self.first_sub = true;
                if self.cursor < flow_len {
                    self.remaining = flow.sizes[self.cursor].abs();
                } else {
                    self.remaining = 0;
                    self.terminal = true;
                }
            }
        }
        self.emitted_sizes.push(emitted_size);
        self.emitted_delays.push(emitted_delay);
        self.any_emitted = true;
        self.steps += 1;

        // Step cap: flush the unsent payload verbatim so the emitted flow
        // still covers every original byte. Flushed packets are
        // bookkeeping only -- no observations, no rewards.
        let mut flushed = 0usize;
        if !self.terminal && self.steps >= self.max_steps {
            let flow = self.flow.as_ref().expect("active episode");
            if !self.first_sub && self.remaining > 0 {
                let dir = flow.sizes[self.cursor].signum();
                self.emitted_sizes.push(dir * self.remaining);
                self.emitted_delays.push(0.0);
                self.cursor += 1;
                flushed += 1;
            }
            while self.cursor < flow_len {
                self.emitted_sizes.push(flow.sizes[self.cursor]);
                self.emitted_delays.push(flow.delays_ms[self.cursor]);
                self.cursor += 1;
                flushed += 1;
            }
            self.remaining = 0;
            self.terminal = true;
        }

        // Censor feedback on the prefix emitted so far (before any flush
        // packets this step appended -- the reward reflects what the
        // censor saw when this packet hit the wire).
        let prefix_len = self.emitted_sizes.len() - flushed;
        let score = self
            .scorer
            .score_prefix(&self.emitted_sizes[..prefix_len], &self.emitted_delays[..prefix_len])?;
        let mut r_adv = decide(score) as f64;
        let mut masked = false;
        if self.cfg.p_mask > 0.0 && self.mask_rng.random_bool(self.cfg.p_mask) {
            r_adv = 0.5;
            masked = true;
        }
        let p_time = delta_eff;
        let total =
            r_adv - self.cfg.lambda_data * p_data - self.cfg.lambda_time * p_time;

        let obs = if self.terminal { None } else { Some(self.observation()) };
        Ok(StepResult {
            obs,
            reward: RewardBreakdown { r_adv, p_data, p_time, total },
            info: StepInfo {
                emitted_size,
                emitted_delay_ms: emitted_delay,
                added_delay_ms: added_ms,
                kind,
                score,
                masked,
                terminal: self.terminal,
                flushed,
            },
        })
    }

    /// The emitted packet sequence as a flow (id and label are inherited
    /// from the original). Only valid once the episode is over.
    pub fn adversarial_flow(&self) -> Result<Flow> {
        if !self.terminal {
            return Err(Error::Env("adversarial flow requested mid-episode".into()));
        }
        let flow = self
            .flow
            .as_ref()
            .ok_or_else(|| Error::Env("no episode has been run".into()))?;
        Flow::new(flow.id, self.emitted_sizes.clone(), self.emitted_delays.clone(), flow.label)
    }
}

/// Independent replay audit of the two shaping guarantees: walks the
/// emitted flow, greedily assigning sub-packets to original packets
/// (a packet ends at the first sub-packet that reaches its payload).
/// Errors describe the first violated constraint.
pub fn audit_episode(original: &Flow, emitted: &Flow) -> Result<()> {
    let mut j = 0usize;
    for i in 0..original.len() {
        let p = original.sizes[i].abs();
        let dir = original.sizes[i].signum();
        let mut acc = 0i64;
        let mut first = true;
        while acc < p {
            if j >= emitted.len() {
                return Err(Error::Input(format!(
                    "packet {i}: emitted flow ends with {acc}/{p} bytes covered"
                )));
            }
            if emitted.sizes[j].signum() != dir {
                return Err(Error::Input(format!(
                    "packet {i}: sub-packet {j} direction flipped"
                )));
            }
            let required = if first { original.delays_ms[i] } else { 0.0 };
            if emitted.delays_ms[j] < required {
                return Err(Error::Input(format!(
                    "packet {i}: sub-packet {j} delay {} under base {}",
                    emitted.delays_ms[j], required
                )));
            }
            acc += emitted.sizes[j].abs();
            first = false;
            j += 1;
        }
    }
    if j != emitted.len() {
        return Err(Error::Input(format!(
            "{} emitted packets beyond the last original payload",
            emitted.len() - j
        )));
    }
    Ok(())
}

/// Closure-backed scorer for tests and fixed-behavior probes.
pub struct FnScorer<F: Fn(&[i64], &[f64]) -> f64>(pub F);

impl<F: Fn(&[i64], &[f64]) -> f64> PrefixScorer for FnScorer<F> {
    fn score_prefix(&self, sizes: &[i64], delays: &[f64]) -> Result<f64> {
        if sizes.is_empty() {
            return Err(Error::Input("cannot score an empty prefix".into()));
        }
        Ok(self.0(sizes, delays))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Label;

    fn benign_scorer() -> FnScorer<impl Fn(&[i64], &[f64]) -> f64> {
        FnScorer(|_: &[i64], _: &[f64]| 1.0)
    }

    fn flow_of(sizes: Vec<i64>, delays: Vec<f64>) -> Flow {
        Flow::new(1, sizes, delays, Label::Sensitive).unwrap()
    }

    fn pass_action(obs: &Observation) -> ShapeAction {
        ShapeAction { size_frac: obs.pending_size, delta_delay_frac: 0.0 }
    }

    #[test]
    fn reset_normalizes_the_first_packet() {
        let scorer = benign_scorer();
        let mut env = ShapingEnv::new(&scorer, EnvConfig::for_mode(Mode::Tcp), 0).unwrap();
        let obs = env.reset(flow_of(vec![730, -100], vec![0.0, 5.0])).unwrap();
        assert!((obs.pending_size - 0.5).abs() < 1e-12);
        assert_eq!(obs.base_delay, 0.0);

        let obs = env.reset(flow_of(vec![-1460, 100], vec![0.0, 5.0])).unwrap();
        assert!((obs.pending_size + 1.0).abs() < 1e-12);
        assert_eq!(obs.base_delay, 0.0);
    }

    #[test]
    fn exact_pass_through_costs_nothing() {
        let scorer = benign_scorer();
        let mut env = ShapingEnv::new(&scorer, EnvConfig::for_mode(Mode::Tcp), 0).unwrap();
        let obs = env.reset(flow_of(vec![730, -444], vec![0.0, 7.0])).unwrap();
        let r = env.step(pass_action(&obs)).unwrap();
        assert_eq!(r.info.emitted_size, 730);
        assert_eq!(r.info.kind, StepKind::Pass);
        assert_eq!(r.reward.p_data, 0.0);
        assert_eq!(r.reward.p_time, 0.0);
        let obs2 = r.obs.unwrap();
        let r2 = env.step(pass_action(&obs2)).unwrap();
        assert_eq!(r2.info.emitted_size, -444);
        assert!(r2.info.terminal);
        let adv = env.adversarial_flow().unwrap();
        assert_eq!(adv.sizes, vec![730, -444]);
        assert_eq!(adv.delays_ms, vec![0.0, 7.0]);
    }

    #[test]
    fn truncation_penalty_matches_hand_computation() {
        let scorer = benign_scorer();
        let mut env = ShapingEnv::new(&scorer, EnvConfig::for_mode(Mode::Tcp), 0).unwrap();
        env.reset(flow_of(vec![1000], vec![0.0])).unwrap();
        let r1 = env
            .step(ShapeAction { size_frac: 400.0 / 1460.0, delta_delay_frac: 0.0 })
            .unwrap();
        assert_eq!(r1.info.emitted_size, 400);
        assert_eq!(r1.info.kind, StepKind::Truncation);
        assert!((r1.reward.p_data - (600.0 / 1460.0 + 0.05)).abs() < 1e-9);
        let obs = r1.obs.unwrap();
        assert!((obs.pending_size - 600.0 / 1460.0).abs() < 1e-12);
        assert_eq!(obs.base_delay, 0.0);

        let r2 = env
            .step(ShapeAction { size_frac: 300.0 / 1460.0, delta_delay_frac: 0.0 })
            .unwrap();
        assert!((r2.reward.p_data - (300.0 / 1460.0 + 0.1)).abs() < 1e-9);
        assert!((r2.reward.p_data - 0.3055).abs() < 1e-4);
    }

    #[test]
    fn padding_penalty_matches_hand_computation() {
        let scorer = benign_scorer();
        let mut env = ShapingEnv::new(&scorer, EnvConfig::for_mode(Mode::Tcp), 0).unwrap();
        env.reset(flow_of(vec![500, 800], vec![0.0, 3.0])).unwrap();
        let r = env
            .step(ShapeAction { size_frac: 600.0 / 1460.0, delta_delay_frac: 0.0 })
            .unwrap();
        assert_eq!(r.info.emitted_size, 600);
        assert_eq!(r.info.kind, StepKind::Padding);
        assert!((r.reward.p_data - 100.0 / 1460.0).abs() < 1e-9);
        // Cursor advanced to the next original packet.
        let obs = r.obs.unwrap();
        assert!((obs.pending_size - 800.0 / 1460.0).abs() < 1e-12);
        assert!((obs.base_delay - 3.0 / 500.0).abs() < 1e-12);
    }

    #[test]
    fn first_packet_delay_is_pinned_to_zero() {
        let scorer = benign_scorer();
        let mut env = ShapingEnv::new(&scorer, EnvConfig::for_mode(Mode::Tcp), 0).unwrap();
        env.reset(flow_of(vec![100, 200], vec![0.0, 10.0])).unwrap();
        let r = env
            .step(ShapeAction { size_frac: 100.0 / 1460.0, delta_delay_frac: 0.5 })
            .unwrap();
        assert_eq!(r.info.emitted_delay_ms, 0.0);
        assert_eq!(r.reward.p_time, 0.0);
        // The second packet pays for its delay: 10 + floor(0.5 * 500).
        let r2 = env
            .step(ShapeAction { size_frac: 200.0 / 1460.0, delta_delay_frac: 0.5 })
            .unwrap();
        assert_eq!(r2.info.emitted_delay_ms, 260.0);
        assert_eq!(r2.reward.p_time, 0.5);
    }

    #[test]
    fn benign_censor_and_zero_penalties_give_unit_reward() {
        let scorer = benign_scorer();
        let cfg = EnvConfig {
            lambda_data: 0.0,
            lambda_time: 0.0,
            lambda_split: 0.0,
            ..EnvConfig::for_mode(Mode::Tcp)
        };
        let mut env = ShapingEnv::new(&scorer, cfg, 0).unwrap();
        let mut obs = env.reset(flow_of(vec![100, -200, 300], vec![0.0, 1.0, 2.0])).unwrap();
        loop {
            let r = env.step(ShapeAction { size_frac: obs.pending_size / 2.0, delta_delay_frac: 0.3 }).unwrap();
            assert_eq!(r.reward.total, 1.0);
            match r.obs {
                Some(o) => obs = o,
                None => break,
            }
        }
    }

    #[test]
    fn masking_rate_is_calibrated() {
        let scorer = benign_scorer();
        let cfg = EnvConfig { p_mask: 0.3, ..EnvConfig::for_mode(Mode::Tcp) };
        let mut env = ShapingEnv::new(&scorer, cfg, 42).unwrap();
        let mut masked = 0usize;
        let mut total = 0usize;
        while total < 10_000 {
            let mut obs = env
                .reset(flow_of(vec![700; 20], (0..20).map(|i| if i == 0 { 0.0 } else { 1.0 }).collect()))
                .unwrap();
            loop {
                let r = env.step(pass_action(&obs)).unwrap();
                total += 1;
                if r.info.masked {
                    assert_eq!(r.reward.r_adv, 0.5);
                    masked += 1;
                }
                match r.obs {
                    Some(o) => obs = o,
                    None => break,
                }
            }
        }
        let rate = masked as f64 / total as f64;
        assert!((rate - 0.3).abs() <= 0.02, "rate {rate}");
    }

    #[test]
    fn reward_decomposition_is_exact() {
        let scorer = FnScorer(|s: &[i64], _: &[f64]| if s.len() % 2 == 0 { 0.9 } else { 0.2 });
        let mut env = ShapingEnv::new(&scorer, EnvConfig::for_mode(Mode::Tcp), 1).unwrap();
        let mut obs = env.reset(flow_of(vec![900, -700, 333], vec![0.0, 2.0, 4.0])).unwrap();
        loop {
            let r = env
                .step(ShapeAction { size_frac: obs.pending_size * 0.7, delta_delay_frac: 0.25 })
                .unwrap();
            let expected = r.reward.r_adv
                - env.cfg.lambda_data * r.reward.p_data
                - env.cfg.lambda_time * r.reward.p_time;
            assert!((r.reward.total - expected).abs() < 1e-9);
            match r.obs {
                Some(o) => obs = o,
                None => break,
            }
        }
    }

    #[test]
    fn step_cap_flushes_the_rest_of_the_flow() {
        let scorer = benign_scorer();
        let mut env = ShapingEnv::new(&scorer, EnvConfig::for_mode(Mode::Tcp), 0).unwrap();
        let original = flow_of(vec![1000, -500, 600], vec![0.0, 2.0, 3.0]);
        env.reset(original.clone()).unwrap();
        // 1-byte truncations exhaust the 12-step cap inside packet 1.
        let mut last = None;
        for _ in 0..12 {
            let r = env
                .step(ShapeAction { size_frac: 1.0 / 1460.0, delta_delay_frac: 0.0 })
                .unwrap();
            last = Some(r);
        }
        let last = last.unwrap();
        assert!(last.info.terminal);
        assert_eq!(last.info.flushed, 3); // residual + two untouched packets
        let adv = env.adversarial_flow().unwrap();
        audit_episode(&original, &adv).unwrap();
        assert_eq!(adv.len(), 15);
        assert_eq!(adv.sizes[12..].to_vec(), vec![988, -500, 600]);
    }

    #[test]
    fn misuse_is_rejected() {
        let scorer = benign_scorer();
        let mut env = ShapingEnv::new(&scorer, EnvConfig::for_mode(Mode::Tcp), 0).unwrap();
        assert!(env.adversarial_flow().is_err());
        let obs = env.reset(flow_of(vec![100], vec![0.0])).unwrap();
        assert!(env.adversarial_flow().is_err());
        env.step(pass_action(&obs)).unwrap();
        assert!(env.step(pass_action(&obs)).is_err());
        assert!(env.adversarial_flow().is_ok());
    }

    #[test]
    fn random_actions_never_break_the_audit() {
        use rand::Rng as _;
        let scorer = FnScorer(|_: &[i64], _: &[f64]| 0.5);
        let mut env = ShapingEnv::new(&scorer, EnvConfig::for_mode(Mode::Tcp), 3).unwrap();
        let mut rng = crate::rng::stream(99, "env-fuzz");
        for ep in 0..200 {
            let len = rng.random_range(1..12usize);
            let sizes: Vec<i64> = (0..len)
                .map(|_| {
                    let m = rng.random_range(1..=1460i64);
                    if rng.random_bool(0.5) { m } else { -m }
                })
                .collect();
            let delays: Vec<f64> =
                (0..len).map(|i| if i == 0 { 0.0 } else { rng.random_range(0.0..50.0) }).collect();
            let original = flow_of(sizes, delays);
            env.reset(original.clone()).unwrap();
            let mut fwd_orig = 0i64;
            let mut bwd_orig = 0i64;
            for &s in &original.sizes {
                if s > 0 { fwd_orig += s } else { bwd_orig -= s }
            }
            loop {
                let a = ShapeAction {
                    size_frac: rng.random_range(-1.0..1.0),
                    delta_delay_frac: rng.random_range(0.0..1.0),
                };
                let r = env.step(a).unwrap();
                if r.info.terminal {
                    break;
                }
            }
            let adv = env.adversarial_flow().unwrap();
            audit_episode(&original, &adv).unwrap_or_else(|e| panic!("episode {ep}: {e}"));
            // Payload conservation per direction.
            let mut fwd = 0i64;
            let mut bwd = 0i64;
            for &s in &adv.sizes {
                if s > 0 { fwd += s } else { bwd -= s }
            }
            assert!(fwd >= fwd_orig && bwd >= bwd_orig);
        }
    }

    #[test]
    fn audit_rejects_corrupted_flows() {
        let original = flow_of(vec![1000, -500], vec![0.0, 5.0]);
        // Lost bytes.
        let bad = flow_of(vec![900, -500], vec![0.0, 5.0]);
        assert!(audit_episode(&original, &bad).is_err());
        // Shrunk base delay.
        let bad = flow_of(vec![1000, -500], vec![0.0, 4.0]);
        assert!(audit_episode(&original, &bad).is_err());
        // Trailing junk.
        let bad = flow_of(vec![1000, -500, 7], vec![0.0, 5.0, 0.0]);
        assert!(audit_episode(&original, &bad).is_err());
        // Exact copy passes.
        audit_episode(&original, &original.clone()).unwrap();
    }
}
