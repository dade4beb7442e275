//! Rollout storage and the clipped-surrogate policy update.

use super::{AgentConfig, PolicyBundle, LN_2PI};
use crate::nn::{clip_grad_norm, mse_loss, Adam, Mat};
use crate::rng::Rng;
use crate::{Error, Result};
use ndarray::ArrayView1;
use rand::Rng as _;

/// Fixed-capacity store for one iteration's worth of experience,
/// written in environment-major order per step. Advantages and returns
/// are attached after collection.
pub struct RolloutBuffer {
    pub states: Mat,
    /// Unsquashed Gaussian samples; the update re-evaluates their
    /// density under the current policy.
    pub raw_actions: Mat,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub dones: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    filled: usize,
}

impl RolloutBuffer {
    pub fn new(capacity: usize, state_dim: usize) -> Self {
        RolloutBuffer {
            states: Mat::zeros((capacity, state_dim)),
            raw_actions: Mat::zeros((capacity, 2)),
            log_probs: Vec::with_capacity(capacity),
            rewards: Vec::with_capacity(capacity),
            values: Vec::with_capacity(capacity),
            dones: Vec::with_capacity(capacity),
            advantages: Vec::new(),
            returns: Vec::new(),
            filled: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.states.nrows()
    }

    pub fn len(&self) -> usize {
        self.filled
    }

    pub fn is_empty(&self) -> bool {
        self.filled == 0
    }

    pub fn is_full(&self) -> bool {
        self.filled == self.capacity()
    }

    pub fn push(
        &mut self,
        state: ArrayView1<f32>,
        raw_action: [f64; 2],
        log_prob: f64,
        reward: f64,
        value: f64,
        done: bool,
    ) -> Result<()> {
        if self.is_full() {
            return Err(Error::Input("rollout buffer is full".into()));
        }
        self.states.row_mut(self.filled).assign(&state);
        self.raw_actions[[self.filled, 0]] = raw_action[0] as f32;
        self.raw_actions[[self.filled, 1]] = raw_action[1] as f32;
        self.log_probs.push(log_prob);
        self.rewards.push(reward);
        self.values.push(value);
        self.dones.push(done);
        self.filled += 1;
        Ok(())
    }

    pub fn set_gae(&mut self, advantages: Vec<f64>, returns: Vec<f64>) -> Result<()> {
        if advantages.len() != self.filled || returns.len() != self.filled {
            return Err(Error::Input("gae vectors must cover the whole buffer".into()));
        }
        self.advantages = advantages;
        self.returns = returns;
        Ok(())
    }

    /// Largest violation of the R = A + V identity across records.
    pub fn identity_gap(&self) -> f64 {
        (0..self.filled)
            .map(|i| (self.returns[i] - self.advantages[i] - self.values[i]).abs())
            .fold(0.0, f64::max)
    }

    pub fn clear(&mut self) {
        self.log_probs.clear();
        self.rewards.clear();
        self.values.clear();
        self.dones.clear();
        self.advantages.clear();
        self.returns.clear();
        self.filled = 0;
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct UpdateStats {
    pub actor_loss: f64,
    pub critic_loss: f64,
    pub entropy: f64,
    pub mean_ratio: f64,
    /// Fraction of samples whose ratio left the clip interval.
    pub clip_frac: f64,
}

/// Pointwise clipped objective: min(ratio * adv, clip(ratio) * adv).
pub fn clipped_objective(ratio: f64, adv: f64, eps: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - eps, 1.0 + eps) * adv)
}

/// One full update pass: for each of `update_epochs` sweeps the buffer
/// is shuffled and split into K minibatches; the actor ascends the
/// clipped surrogate plus an entropy bonus, the critic descends the
/// squared error to the returns. Optimizer moments persist across
/// calls through the two Adam states.
pub fn ppo_update(
    bundle: &mut PolicyBundle,
    opt_actor: &mut Adam,
    opt_critic: &mut Adam,
    buf: &RolloutBuffer,
    rng: &mut Rng,
) -> Result<UpdateStats> {
    if buf.is_empty() {
        return Err(Error::Input("ppo update on an empty buffer".into()));
    }
    if buf.advantages.len() != buf.len() || buf.returns.len() != buf.len() {
        return Err(Error::Input("buffer advantages not computed".into()));
    }
    let cfg: AgentConfig = bundle.cfg.clone();
    let n = buf.len();
    let mb_size = n.div_ceil(cfg.minibatches);

    // Per-update advantage normalization (optional).
    let advs: Vec<f64> = if cfg.normalize_advantage && n > 1 {
        let mean = buf.advantages.iter().sum::<f64>() / n as f64;
        let var = buf.advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt().max(1e-8);
        buf.advantages.iter().map(|a| (a - mean) / std).collect()
    } else {
        buf.advantages.clone()
    };

    let mut idx: Vec<usize> = (0..n).collect();
    let mut sum_actor = 0.0;
    let mut sum_critic = 0.0;
    let mut sum_ratio = 0.0;
    let mut sum_clipped = 0.0;
    let mut sum_entropy = 0.0;
    let mut batches = 0usize;

    for _ in 0..cfg.update_epochs {
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        for chunk in idx.chunks(mb_size) {
            let b = chunk.len();
            let mut states = Mat::zeros((b, bundle.state_dim()));
            for (row, &i) in chunk.iter().enumerate() {
                states.row_mut(row).assign(&buf.states.row(i));
            }

            // Actor pass: density of the stored raw actions under the
            // current Gaussian.
            let sigma = bundle.sigmas();
            let cache = bundle.actor.forward_cached(&states);
            let mean = cache.output().clone();
            let mut z = Mat::zeros((b, 2));
            let mut ratios = vec![0.0f64; b];
            for (row, &i) in chunk.iter().enumerate() {
                let mut logp = -LN_2PI;
                for d in 0..2 {
                    let zd = (buf.raw_actions[[i, d]] as f64 - mean[[row, d]] as f64) / sigma[d];
                    z[[row, d]] = zd as f32;
                    logp += -0.5 * zd * zd - sigma[d].ln();
                }
                ratios[row] = (logp - buf.log_probs[i]).exp();
            }

            let entropy = sigma[0].ln() + sigma[1].ln() + 1.0 + LN_2PI;
            let mut surrogate = 0.0f64;
            let mut d_mean = Mat::zeros((b, 2));
            let mut d_log_std = [0.0f64; 2];
            for (row, &i) in chunk.iter().enumerate() {
                let adv = advs[i];
                let r = ratios[row];
                surrogate += clipped_objective(r, adv, cfg.clip_eps);
                sum_ratio += r;
                if (r - 1.0).abs() > cfg.clip_eps {
                    sum_clipped += 1.0;
                }
                // Gradient flows through the unclipped branch only.
                let active = !((adv > 0.0 && r > 1.0 + cfg.clip_eps)
                    || (adv < 0.0 && r < 1.0 - cfg.clip_eps));
                if active {
                    let dlogp = -(adv * r) / b as f64; // d(-surrogate)/dlogp
                    for d in 0..2 {
                        let zd = z[[row, d]] as f64;
                        d_mean[[row, d]] += (dlogp * zd / sigma[d]) as f32;
                        d_log_std[d] += dlogp * (zd * zd - 1.0);
                    }
                }
            }
            // Entropy bonus: d(-coef * H)/dlog_std = -coef per dimension.
            for d in 0..2 {
                d_log_std[d] -= cfg.entropy_coef;
            }
            let actor_loss = -surrogate / b as f64 - cfg.entropy_coef * entropy;

            bundle.actor.zero_grad();
            bundle.log_std.zero_grad();
            bundle.actor.backward(&cache, &d_mean);
            for d in 0..2 {
                bundle.log_std.grad[d] = d_log_std[d] as f32;
            }
            {
                let PolicyBundle { actor, log_std, .. } = bundle;
                let mut params = actor.params_mut();
                params.push(log_std);
                clip_grad_norm(&mut params, cfg.grad_clip as f32);
                opt_actor.step(&mut params);
            }
            bundle.clamp_log_std();

            // Critic pass.
            let cache = bundle.critic.forward_cached(&states);
            let mut target = Mat::zeros((b, 1));
            for (row, &i) in chunk.iter().enumerate() {
                target[[row, 0]] = buf.returns[i] as f32;
            }
            let (critic_loss, grad) = mse_loss(cache.output(), &target);
            bundle.critic.zero_grad();
            bundle.critic.backward(&cache, &grad);
            {
                let mut params = bundle.critic.params_mut();
                clip_grad_norm(&mut params, cfg.grad_clip as f32);
                opt_critic.step(&mut params);
            }

            sum_actor += actor_loss;
            sum_critic += critic_loss;
            sum_entropy += entropy;
            batches += 1;
        }
    }

    let samples = (cfg.update_epochs * n) as f64;
    Ok(UpdateStats {
        actor_loss: sum_actor / batches as f64,
        critic_loss: sum_critic / batches as f64,
        entropy: sum_entropy / batches as f64,
        mean_ratio: sum_ratio / samples,
        clip_frac: sum_clipped / samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::AgentConfig;
    use ndarray::Array1;
    use crate::encoder::StateEncoder;
    use crate::rng::stream;

    fn tiny_bundle(cfg: AgentConfig) -> PolicyBundle {
        let mut rng = stream(8, "ppo-test");
        let enc = StateEncoder::new(4, 1, &mut rng);
        PolicyBundle::new(enc, cfg, &mut rng).unwrap()
    }

    fn filled_buffer(bundle: &PolicyBundle, n: usize, seed: u64) -> RolloutBuffer {
        let mut rng = stream(seed, "ppo-buffer");
        let mut buf = RolloutBuffer::new(n, bundle.state_dim());
        for _ in 0..n {
            let state =
                Array1::from_iter((0..bundle.state_dim()).map(|_| rng.random_range(-1.0..1.0f32)));
            let (_, u, lp) = bundle.sample_action(&state, &mut rng).unwrap();
            let v = bundle.value(&state).unwrap();
            buf.push(state.view(), u, lp, rng.random_range(-1.0..1.0), v, rng.random_bool(0.1))
                .unwrap();
        }
        buf
    }

    #[test]
    fn clipped_objective_pointwise_cases() {
        let eps = 0.2;
        // Ratio far above the ceiling with positive advantage: capped.
        assert!((clipped_objective(1.0 + 2.0 * eps, 2.0, eps) - (1.0 + eps) * 2.0).abs() < 1e-12);
        // Ratio far below the floor with negative advantage: capped.
        assert!((clipped_objective(0.5, -1.0, eps) - (1.0 - eps) * -1.0).abs() < 1e-12);
        // Inside the interval the two branches coincide.
        assert!((clipped_objective(1.1, 0.7, eps) - 1.1 * 0.7).abs() < 1e-12);
        // Pessimistic side wins: low ratio with positive advantage passes through.
        assert!((clipped_objective(0.4, 1.0, eps) - 0.4).abs() < 1e-12);
    }

    #[test]
    fn first_pass_ratios_are_one() {
        let cfg = AgentConfig {
            lr: 0.0,
            minibatches: 2,
            update_epochs: 1,
            n_envs: 2,
            rollout_steps: 8,
            ..Default::default()
        };
        let mut bundle = tiny_bundle(cfg);
        let mut buf = filled_buffer(&bundle, 16, 1);
        let adv: Vec<f64> = (0..16).map(|i| i as f64 / 8.0 - 1.0).collect();
        let ret: Vec<f64> = adv.iter().zip(buf.values.iter()).map(|(a, v)| a + v).collect();
        buf.set_gae(adv, ret).unwrap();
        assert!(buf.identity_gap() < 1e-12);
        let mut opt_a = Adam::new(0.0);
        let mut opt_c = Adam::new(0.0);
        let stats =
            ppo_update(&mut bundle, &mut opt_a, &mut opt_c, &buf, &mut stream(2, "upd")).unwrap();
        assert!((stats.mean_ratio - 1.0).abs() < 1e-6, "{stats:?}");
        assert_eq!(stats.clip_frac, 0.0);
    }

    #[test]
    fn critic_regresses_to_constant_returns() {
        let cfg = AgentConfig {
            entropy_coef: 0.0,
            minibatches: 2,
            update_epochs: 1,
            lr: 1e-3,
            ..Default::default()
        };
        let mut bundle = tiny_bundle(cfg);
        let mut buf = filled_buffer(&bundle, 32, 3);
        // Zero advantages keep the actor still; constant returns pull
        // the critic toward 5.
        buf.set_gae(vec![0.0; 32], vec![5.0; 32]).unwrap();
        let mut opt_a = Adam::new(0.0);
        let mut opt_c = Adam::new(1e-2);
        let mut rng = stream(4, "upd");
        let mut losses = Vec::new();
        for _ in 0..10 {
            let stats = ppo_update(&mut bundle, &mut opt_a, &mut opt_c, &buf, &mut rng).unwrap();
            losses.push(stats.critic_loss);
        }
        // Adam wiggles near the floor; demand a large overall drop
        // rather than strict monotonicity.
        assert!(
            losses[9] < losses[0] / 100.0,
            "critic loss did not converge: {losses:?}"
        );
        assert!(losses[9] < 0.1, "critic loss stayed high: {losses:?}");
    }

    #[test]
    fn update_moves_the_policy_toward_advantaged_actions() {
        let cfg = AgentConfig {
            minibatches: 1,
            update_epochs: 4,
            lr: 1e-2,
            entropy_coef: 0.0,
            normalize_advantage: false,
            ..Default::default()
        };
        let mut bundle = tiny_bundle(cfg);
        let state = Array1::from_elem(bundle.state_dim(), 0.3f32);
        let mut rng = stream(6, "collect");
        let mut buf = RolloutBuffer::new(32, bundle.state_dim());
        let mut grand_mean = 0.0;
        for _ in 0..32 {
            let (_, u, lp) = bundle.sample_action(&state, &mut rng).unwrap();
            // Reward samples whose first dim exceeds the mean.
            let adv = if u[0] > bundle.actor_mean(&state).unwrap()[0] { 1.0 } else { -1.0 };
            grand_mean += u[0];
            buf.push(state.view(), u, lp, adv, 0.0, true).unwrap();
        }
        grand_mean /= 32.0;
        let before = bundle.actor_mean(&state).unwrap()[0];
        let adv: Vec<f64> = (0..32)
            .map(|i| if buf.raw_actions[[i, 0]] as f64 > before { 1.0 } else { -1.0 })
            .collect();
        let ret = vec![0.0; 32];
        buf.set_gae(adv, ret).unwrap();
        let mut opt_a = Adam::new(1e-2);
        let mut opt_c = Adam::new(0.0);
        for _ in 0..5 {
            ppo_update(&mut bundle, &mut opt_a, &mut opt_c, &buf, &mut stream(7, "upd")).unwrap();
        }
        let after = bundle.actor_mean(&state).unwrap()[0];
        assert!(after > before, "mean did not move toward rewarded region: {before} -> {after}");
        let _ = grand_mean;
    }

    #[test]
    fn empty_or_incomplete_buffers_are_rejected() {
        let mut bundle = tiny_bundle(AgentConfig::default());
        let buf = RolloutBuffer::new(8, bundle.state_dim());
        let mut opt_a = Adam::new(0.0);
        let mut opt_c = Adam::new(0.0);
        assert!(
            ppo_update(&mut bundle, &mut opt_a, &mut opt_c, &buf, &mut stream(1, "u")).is_err()
        );
        let buf2 = filled_buffer(&bundle, 8, 9);
        // GAE never attached.
        assert!(
            ppo_update(&mut bundle, &mut opt_a, &mut opt_c, &buf2, &mut stream(1, "u")).is_err()
        );
    }

    #[test]
    fn buffer_rejects_overflow_and_mismatched_gae() {
        let bundle = tiny_bundle(AgentConfig::default());
        let mut buf = filled_buffer(&bundle, 4, 11);
        let state = Array1::zeros(bundle.state_dim());
        assert!(buf.push(state.view(), [0.0, 0.0], 0.0, 0.0, 0.0, false).is_err());
        assert!(buf.set_gae(vec![0.0; 3], vec![0.0; 4]).is_err());
        buf.clear();
        assert!(buf.is_empty());
    }
}
