//! Rollout collection across parallel environments and the full
//! training loop: collect N*T steps, estimate advantages, update, probe
//! the attack success rate, repeat until the timestep budget ends.

use super::gae::compute_gae;
use super::ppo::{ppo_update, RolloutBuffer};
use super::PolicyBundle;
use crate::censor::{decide, PrefixScorer};
use crate::encoder::BatchStream;
use crate::env::{
    EnvConfig, Observation, RewardBreakdown, ShapeAction, ShapingEnv, StepInfo, StepRecord,
};
use crate::flow::Flow;
use crate::nn::{Adam, Mat};
use crate::rng::{stream, Rng};
use crate::{Error, Result};
use ndarray::Array1;
use std::io::Write as _;
use std::path::Path;

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct IterationStats {
    pub iteration: usize,
    /// Cumulative environment steps after this iteration.
    pub timesteps: usize,
    /// Mean total reward of episodes completed during the rollout
    /// (mean step reward when none completed).
    pub mean_reward: f64,
    pub probe_asr: f64,
    pub clip_frac: f64,
}

/// The training log CSV; columns are stable for downstream plotting.
pub fn write_training_log(path: &Path, stats: &[IterationStats]) -> Result<()> {
    let mut out = String::from("iteration,timesteps,mean_reward,probe_asr,clip_frac\n");
    for s in stats {
        out.push_str(&format!(
            "{},{},{:.9},{:.9},{:.9}\n",
            s.iteration, s.timesteps, s.mean_reward, s.probe_asr, s.clip_frac
        ));
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Where lanes get their next flow from.
enum FlowSource {
    /// Training: sample uniformly forever.
    Random { pool: Vec<Flow>, rng: Rng },
    /// Evaluation: hand out each flow once, then retire lanes.
    Queue { flows: Vec<Flow>, next: usize },
}

impl FlowSource {
    fn next_flow(&mut self) -> Option<Flow> {
        match self {
            FlowSource::Random { pool, rng } => {
                use rand::Rng as _;
                Some(pool[rng.random_range(0..pool.len())].clone())
            }
            FlowSource::Queue { flows, next } => {
                if *next < flows.len() {
                    *next += 1;
                    Some(flows[*next - 1].clone())
                } else {
                    None
                }
            }
        }
    }
}

/// Everything one vector step produced for one lane.
pub struct LaneEvent {
    pub lane: usize,
    pub state: Array1<f32>,
    pub action: ShapeAction,
    pub raw_action: [f64; 2],
    pub log_prob: f64,
    pub value: f64,
    pub obs: Observation,
    pub reward: RewardBreakdown,
    pub done: bool,
    pub info: StepInfo,
    /// The emitted flow, present when this step ended the episode.
    pub finished: Option<Flow>,
}

/// N environments advanced in lockstep, sharing batched encoder
/// streams: one stream over observations, one over emitted actions.
/// Every push advances all lanes at once, which keeps the recurrent
/// updates a single matrix product per layer.
pub struct VecRunner<'a> {
    pub envs: Vec<ShapingEnv<'a>>,
    obs_stream: BatchStream,
    act_stream: BatchStream,
    /// Code of the all-zero placeholder pair, used as the action-history
    /// half of the state at the first decision of every episode.
    zero_code: Array1<f32>,
    t_in_ep: Vec<usize>,
    cur_obs: Vec<Observation>,
    active: Vec<bool>,
    source: FlowSource,
}

fn env_seed(seed: u64, lane: usize) -> u64 {
    seed ^ 0x9e3779b97f4a7c15u64.wrapping_mul(lane as u64 + 1)
}

impl<'a> VecRunner<'a> {
    fn new(
        scorer: &'a dyn PrefixScorer,
        env_cfg: &EnvConfig,
        bundle: &PolicyBundle,
        n_lanes: usize,
        source: FlowSource,
        seed: u64,
    ) -> Result<Self> {
        let mut envs = Vec::with_capacity(n_lanes);
        for lane in 0..n_lanes {
            envs.push(ShapingEnv::new(scorer, env_cfg.clone(), env_seed(seed, lane))?);
        }
        let zero_code = Array1::from_vec(bundle.encoder.encode(&[(0.0, 0.0)])?);
        let mut runner = VecRunner {
            envs,
            obs_stream: BatchStream::new(&bundle.encoder, n_lanes),
            act_stream: BatchStream::new(&bundle.encoder, n_lanes),
            zero_code,
            t_in_ep: vec![1; n_lanes],
            cur_obs: vec![Observation { pending_size: 0.0, base_delay: 0.0 }; n_lanes],
            active: vec![true; n_lanes],
            source,
        };
        // Seat the first episode on every lane.
        let mut first_obs = Mat::zeros((n_lanes, 2));
        let mut obs_active = vec![false; n_lanes];
        for lane in 0..n_lanes {
            match runner.source.next_flow() {
                Some(flow) => {
                    let obs = runner.envs[lane].reset(flow)?;
                    runner.cur_obs[lane] = obs;
                    first_obs[[lane, 0]] = obs.pending_size as f32;
                    first_obs[[lane, 1]] = obs.base_delay as f32;
                    obs_active[lane] = true;
                }
                None => runner.active[lane] = false,
            }
        }
        runner.obs_stream.push(&bundle.encoder, &first_obs, Some(&obs_active));
        Ok(runner)
    }

    pub fn any_active(&self) -> bool {
        self.active.iter().any(|&a| a)
    }

    /// Current state matrix: encoded observation history beside encoded
    /// action history (the zero-placeholder code at first decisions).
    fn states(&self, bundle: &PolicyBundle) -> Result<Mat> {
        let n = self.envs.len();
        let h = bundle.encoder.h;
        let mut states = Mat::zeros((n, 2 * h));
        let obs_codes = self.obs_stream.codes();
        let act_codes = self.act_stream.codes();
        for lane in 0..n {
            if !self.active[lane] {
                continue;
            }
            states.slice_mut(ndarray::s![lane, ..h]).assign(&obs_codes.row(lane));
            if self.t_in_ep[lane] == 1 {
                states.slice_mut(ndarray::s![lane, h..]).assign(&self.zero_code);
            } else {
                states.slice_mut(ndarray::s![lane, h..]).assign(&act_codes.row(lane));
            }
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(Error::Env("non-finite state entered the policy".into()));
        }
        Ok(states)
    }

    /// Advances every active lane one step. `noise` None means the
    /// deterministic (evaluation) policy.
    pub fn step(
        &mut self,
        bundle: &PolicyBundle,
        mut noise: Option<&mut Rng>,
    ) -> Result<Vec<LaneEvent>> {
        let n = self.envs.len();
        let states = self.states(bundle)?;
        let means = bundle.actor.forward(&states);
        let values = bundle.critic.forward(&states);
        let sigma = bundle.sigmas();

        let mut events = Vec::new();
        let mut next_obs = Mat::zeros((n, 2));
        let mut obs_active = vec![false; n];
        let mut act_x = Mat::zeros((n, 2));
        let mut act_active = vec![false; n];
        let max_unit = self.envs[0].max_unit() as f64;
        let max_delay = self.envs[0].cfg.max_delay_ms;

        for lane in 0..n {
            if !self.active[lane] {
                continue;
            }
            let mean = [means[[lane, 0]] as f64, means[[lane, 1]] as f64];
            let (action, raw, logp) = match noise.as_deref_mut() {
                Some(rng) => {
                    use rand_distr::Distribution as _;
                    let mut u = [0.0f64; 2];
                    for (d, item) in u.iter_mut().enumerate() {
                        let eps: f64 = rand_distr::StandardNormal.sample(rng);
                        *item = mean[d] + eps * sigma[d];
                    }
                    (PolicyBundle::squash(u), u, bundle.log_prob(mean, u))
                }
                None => (PolicyBundle::squash(mean), mean, bundle.log_prob(mean, mean)),
            };

            let obs_before = self.cur_obs[lane];
            let result = self.envs[lane].step(action)?;

            let mut finished = None;
            if result.info.terminal {
                finished = Some(self.envs[lane].adversarial_flow()?);
                self.obs_stream.reset_row(lane);
                self.act_stream.reset_row(lane);
                self.t_in_ep[lane] = 1;
                match self.source.next_flow() {
                    Some(flow) => {
                        let obs = self.envs[lane].reset(flow)?;
                        self.cur_obs[lane] = obs;
                        next_obs[[lane, 0]] = obs.pending_size as f32;
                        next_obs[[lane, 1]] = obs.base_delay as f32;
                        obs_active[lane] = true;
                    }
                    None => self.active[lane] = false,
                }
            } else {
                let obs = result.obs.expect("non-terminal step carries an observation");
                self.cur_obs[lane] = obs;
                next_obs[[lane, 0]] = obs.pending_size as f32;
                next_obs[[lane, 1]] = obs.base_delay as f32;
                obs_active[lane] = true;
                // The action history encodes what actually hit the wire.
                act_x[[lane, 0]] = (result.info.emitted_size as f64 / max_unit) as f32;
                act_x[[lane, 1]] = ((result.info.emitted_delay_ms / max_delay).min(1.0)) as f32;
                act_active[lane] = true;
                self.t_in_ep[lane] += 1;
            }

            events.push(LaneEvent {
                lane,
                state: states.row(lane).to_owned(),
                action,
                raw_action: raw,
                log_prob: logp,
                value: values[[lane, 0]] as f64,
                obs: obs_before,
                reward: result.reward,
                done: result.info.terminal,
                info: result.info,
                finished,
            });
        }

        self.obs_stream.push(&bundle.encoder, &next_obs, Some(&obs_active));
        self.act_stream.push(&bundle.encoder, &act_x, Some(&act_active));
        Ok(events)
    }

    /// Value estimates of the current states, for bootstrapping a cut
    /// rollout.
    fn bootstrap_values(&self, bundle: &PolicyBundle) -> Result<Vec<f64>> {
        let states = self.states(bundle)?;
        let v = bundle.critic.forward(&states);
        Ok((0..self.envs.len()).map(|e| v[[e, 0]] as f64).collect())
    }
}

/// Fraction of flows the censor permits after the policy reshapes them
/// (deterministic actions, complete flows, no reward masking).
pub fn probe_asr(
    bundle: &PolicyBundle,
    scorer: &dyn PrefixScorer,
    env_cfg: &EnvConfig,
    flows: &[Flow],
    lanes: usize,
) -> Result<f64> {
    if flows.is_empty() {
        return Err(Error::Input("probe set is empty".into()));
    }
    let mut cfg = env_cfg.clone();
    cfg.p_mask = 0.0;
    let source = FlowSource::Queue { flows: flows.to_vec(), next: 0 };
    let mut runner =
        VecRunner::new(scorer, &cfg, bundle, lanes.min(flows.len()).max(1), source, 0)?;
    let mut permitted = 0usize;
    let mut total = 0usize;
    while runner.any_active() {
        for ev in runner.step(bundle, None)? {
            if let Some(flow) = ev.finished {
                let score = scorer.score_prefix(&flow.sizes, &flow.delays_ms)?;
                permitted += decide(score) as usize;
                total += 1;
            }
        }
    }
    Ok(permitted as f64 / total as f64)
}

/// Runs the full loop: rollouts of N*T steps, GAE, clipped-surrogate
/// updates, and a probe-set ASR per iteration. Stops at the timestep
/// budget, or earlier once `asr_target` is reached. The encoder inside
/// the bundle is never touched.
pub fn train_amoeba(
    scorer: &dyn PrefixScorer,
    env_cfg: &EnvConfig,
    train_flows: &[Flow],
    probe_flows: &[Flow],
    bundle: &mut PolicyBundle,
) -> Result<Vec<IterationStats>> {
    train_amoeba_with(scorer, env_cfg, train_flows, probe_flows, bundle, |_| {})
}

/// `train_amoeba` with a progress callback, called once per iteration.
pub fn train_amoeba_with(
    scorer: &dyn PrefixScorer,
    env_cfg: &EnvConfig,
    train_flows: &[Flow],
    probe_flows: &[Flow],
    bundle: &mut PolicyBundle,
    mut on_iter: impl FnMut(&IterationStats),
) -> Result<Vec<IterationStats>> {
    bundle.cfg.validate()?;
    if train_flows.is_empty() || probe_flows.is_empty() {
        return Err(Error::Input("training and probe flow sets must be non-empty".into()));
    }
    let cfg = bundle.cfg.clone();
    let n = cfg.n_envs;
    let t_steps = cfg.rollout_steps;
    let n_iters = (cfg.total_timesteps / (n * t_steps)).max(1);

    let source = FlowSource::Random {
        pool: train_flows.to_vec(),
        rng: stream(cfg.seed, "flow-pick"),
    };
    let mut runner = VecRunner::new(scorer, env_cfg, bundle, n, source, cfg.seed)?;
    let mut noise = stream(cfg.seed, "action-noise");
    let mut shuffle = stream(cfg.seed, "ppo-shuffle");
    let mut opt_actor = Adam::new(cfg.lr as f32);
    let mut opt_critic = Adam::new(cfg.lr as f32);
    let mut buf = RolloutBuffer::new(n * t_steps, bundle.state_dim());
    let mut stats = Vec::with_capacity(n_iters);

    for iteration in 0..n_iters {
        buf.clear();
        let mut completed: Vec<f64> = Vec::new();
        // Episode returns must survive lane resets; tally before reset
        // happens inside the runner, so track via events here.
        let mut running: Vec<f64> = vec![0.0; n];
        for _ in 0..t_steps {
            let events = runner.step(bundle, Some(&mut noise))?;
            for ev in &events {
                running[ev.lane] += ev.reward.total;
                if ev.done {
                    completed.push(running[ev.lane]);
                    running[ev.lane] = 0.0;
                }
                buf.push(
                    ev.state.view(),
                    ev.raw_action,
                    ev.log_prob,
                    ev.reward.total,
                    ev.value,
                    ev.done,
                )?;
            }
        }

        // Per-lane GAE with bootstrap on cut episodes, scattered back
        // into collection order (records are lane-major per step).
        let boots = runner.bootstrap_values(bundle)?;
        let mut advantages = vec![0.0f64; buf.len()];
        let mut returns = vec![0.0f64; buf.len()];
        for lane in 0..n {
            let idxs: Vec<usize> = (0..t_steps).map(|t| t * n + lane).collect();
            let rewards: Vec<f64> = idxs.iter().map(|&i| buf.rewards[i]).collect();
            let values: Vec<f64> = idxs.iter().map(|&i| buf.values[i]).collect();
            let dones: Vec<bool> = idxs.iter().map(|&i| buf.dones[i]).collect();
            let (adv, ret) =
                compute_gae(&rewards, &values, &dones, boots[lane], cfg.gamma, cfg.gae_lambda)?;
            for (k, &i) in idxs.iter().enumerate() {
                advantages[i] = adv[k];
                returns[i] = ret[k];
            }
        }
        buf.set_gae(advantages, returns)?;

        let update = ppo_update(bundle, &mut opt_actor, &mut opt_critic, &buf, &mut shuffle)?;
        let probe_set = &probe_flows[..cfg.probe_flows.min(probe_flows.len())];
        let asr = probe_asr(bundle, scorer, env_cfg, probe_set, n)?;
        let mean_reward = if completed.is_empty() {
            buf.rewards.iter().sum::<f64>() / buf.len() as f64
        } else {
            completed.iter().sum::<f64>() / completed.len() as f64
        };
        stats.push(IterationStats {
            iteration,
            timesteps: (iteration + 1) * n * t_steps,
            mean_reward,
            probe_asr: asr,
            clip_frac: update.clip_frac,
        });
        on_iter(stats.last().expect("just pushed"));
        if let Some(target) = cfg.asr_target {
            if asr >= target {
                break;
            }
        }
    }
    Ok(stats)
}

#[derive(Debug, Clone)]
pub struct EpisodeOutcome {
    pub adversarial: Flow,
    pub total_reward: f64,
    pub steps: usize,
    pub records: Vec<StepRecord>,
}

/// One deterministic episode on `flow`; the stepwise records are ready
/// for JSON-lines logging.
pub fn run_episode(
    bundle: &PolicyBundle,
    scorer: &dyn PrefixScorer,
    env_cfg: &EnvConfig,
    flow: Flow,
) -> Result<EpisodeOutcome> {
    let source = FlowSource::Queue { flows: vec![flow], next: 0 };
    let mut runner = VecRunner::new(scorer, env_cfg, bundle, 1, source, 0)?;
    let mut records = Vec::new();
    let mut total = 0.0;
    let mut adversarial = None;
    let mut step = 0usize;
    while runner.any_active() {
        let events = runner.step(bundle, None)?;
        for ev in events {
            total += ev.reward.total;
            records.push(StepRecord {
                step,
                pending_size: ev.obs.pending_size,
                base_delay: ev.obs.base_delay,
                size_frac: ev.action.size_frac,
                delta_delay_frac: ev.action.delta_delay_frac,
                emitted_size: ev.info.emitted_size,
                emitted_delay_ms: ev.info.emitted_delay_ms,
                added_delay_ms: ev.info.added_delay_ms,
                kind: ev.info.kind,
                score: ev.info.score,
                masked: ev.info.masked,
                r_adv: ev.reward.r_adv,
                p_data: ev.reward.p_data,
                p_time: ev.reward.p_time,
                total: ev.reward.total,
                terminal: ev.done,
            });
            step += 1;
            if let Some(f) = ev.finished {
                adversarial = Some(f);
            }
        }
    }
    let adversarial =
        adversarial.ok_or_else(|| Error::Env("episode produced no finished flow".into()))?;
    Ok(EpisodeOutcome { adversarial, total_reward: total, steps: step, records })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AgentConfig;
    use crate::encoder::StateEncoder;
    use crate::env::{audit_episode, FnScorer};
    use crate::flow::{Label, Mode};

    fn tiny_bundle(cfg: AgentConfig) -> PolicyBundle {
        let mut rng = stream(12, "train-test");
        let enc = StateEncoder::new(8, 2, &mut rng);
        PolicyBundle::new(enc, cfg, &mut rng).unwrap()
    }

    fn tiny_flows(n: usize) -> Vec<Flow> {
        (0..n)
            .map(|i| {
                let len = 3 + (i % 3);
                let sizes: Vec<i64> =
                    (0..len).map(|k| if k % 2 == 0 { 400 + 10 * i as i64 } else { -600 }).collect();
                let delays: Vec<f64> =
                    (0..len).map(|k| if k == 0 { 0.0 } else { 2.0 + k as f64 }).collect();
                Flow::new(i as u64, sizes, delays, Label::Sensitive).unwrap()
            })
            .collect()
    }

    fn tiny_cfg() -> AgentConfig {
        AgentConfig {
            n_envs: 2,
            rollout_steps: 16,
            minibatches: 2,
            update_epochs: 1,
            total_timesteps: 64,
            probe_flows: 4,
            seed: 21,
            ..Default::default()
        }
    }

    #[test]
    fn training_is_seed_deterministic_and_freezes_the_encoder() {
        let scorer = FnScorer(|s: &[i64], _: &[f64]| if s.len() > 2 { 0.8 } else { 0.3 });
        let env_cfg = EnvConfig::for_mode(Mode::Tcp);
        let flows = tiny_flows(6);
        let run = || {
            let mut bundle = tiny_bundle(tiny_cfg());
            let before = bundle.encoder.checksum();
            let stats =
                train_amoeba(&scorer, &env_cfg, &flows[..4], &flows[4..], &mut bundle).unwrap();
            assert_eq!(bundle.encoder.checksum(), before);
            let probe_state = Array1::from_elem(bundle.state_dim(), 0.1f32);
            (stats, bundle.actor_mean(&probe_state).unwrap())
        };
        let (s1, m1) = run();
        let (s2, m2) = run();
        assert_eq!(s1.len(), 2); // 64 / (2 * 16)
        assert_eq!(s1.len(), s2.len());
        for (a, b) in s1.iter().zip(s2.iter()) {
            assert_eq!(a.mean_reward, b.mean_reward);
            assert_eq!(a.probe_asr, b.probe_asr);
            assert_eq!(a.clip_frac, b.clip_frac);
            assert_eq!(a.timesteps, b.timesteps);
        }
        assert_eq!(m1, m2);
    }

    #[test]
    fn probe_asr_tracks_the_censor_verdict() {
        let benign = FnScorer(|_: &[i64], _: &[f64]| 1.0);
        let hostile = FnScorer(|_: &[i64], _: &[f64]| 0.0);
        let env_cfg = EnvConfig::for_mode(Mode::Tcp);
        let bundle = tiny_bundle(tiny_cfg());
        let flows = tiny_flows(5);
        let asr = probe_asr(&bundle, &benign, &env_cfg, &flows, 2).unwrap();
        assert_eq!(asr, 1.0);
        let asr = probe_asr(&bundle, &hostile, &env_cfg, &flows, 2).unwrap();
        assert_eq!(asr, 0.0);
    }

    #[test]
    fn early_stop_cuts_the_curve() {
        let scorer = FnScorer(|_: &[i64], _: &[f64]| 1.0);
        let env_cfg = EnvConfig::for_mode(Mode::Tcp);
        let flows = tiny_flows(6);
        let mut cfg = tiny_cfg();
        cfg.asr_target = Some(0.5);
        let mut bundle = tiny_bundle(cfg);
        let stats =
            train_amoeba(&scorer, &env_cfg, &flows[..4], &flows[4..], &mut bundle).unwrap();
        assert_eq!(stats.len(), 1);
        assert_eq!(stats[0].probe_asr, 1.0);
    }

    #[test]
    fn run_episode_yields_an_auditable_flow_and_records() {
        let scorer = FnScorer(|_: &[i64], _: &[f64]| 0.6);
        let env_cfg = EnvConfig::for_mode(Mode::Tcp);
        let bundle = tiny_bundle(tiny_cfg());
        let flow = tiny_flows(1)[0].clone();
        let outcome = run_episode(&bundle, &scorer, &env_cfg, flow.clone()).unwrap();
        audit_episode(&flow, &outcome.adversarial).unwrap();
        assert_eq!(outcome.records.len(), outcome.steps);
        assert!(outcome.steps >= flow.len());
        assert!(outcome.records.last().unwrap().terminal);
        // Identical call, identical outcome (deterministic policy).
        let again = run_episode(&bundle, &scorer, &env_cfg, flow.clone()).unwrap();
        assert_eq!(outcome.adversarial.sizes, again.adversarial.sizes);
        assert_eq!(outcome.total_reward, again.total_reward);
    }

    #[test]
    fn log_file_has_the_stable_header() {
        let stats = vec![
            IterationStats {
                iteration: 0,
                timesteps: 32,
                mean_reward: 0.5,
                probe_asr: 0.25,
                clip_frac: 0.125,
            },
            IterationStats {
                iteration: 1,
                timesteps: 64,
                mean_reward: 0.625,
                probe_asr: 0.5,
                clip_frac: 0.0625,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.csv");
        write_training_log(&path, &stats).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "iteration,timesteps,mean_reward,probe_asr,clip_frac");
        assert_eq!(lines.next().unwrap(), "0,32,0.500000000,0.250000000,0.125000000");
        write_training_log(&path, &stats).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
    }

    #[test]
    fn empty_flow_sets_are_rejected() {
        let scorer = FnScorer(|_: &[i64], _: &[f64]| 1.0);
        let env_cfg = EnvConfig::for_mode(Mode::Tcp);
        let mut bundle = tiny_bundle(tiny_cfg());
        let flows = tiny_flows(2);
        assert!(train_amoeba(&scorer, &env_cfg, &[], &flows, &mut bundle).is_err());
        assert!(train_amoeba(&scorer, &env_cfg, &flows, &[], &mut bundle).is_err());
    }
}
