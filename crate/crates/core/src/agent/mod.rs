//! The shaping agent: a Gaussian policy and value critic over encoded
//! histories, trained with clipped-surrogate updates on rollouts from
//! parallel environments.

pub mod gae;
pub mod ppo;
pub mod train;

use crate::encoder::StateEncoder;
use crate::env::ShapeAction;
use crate::io::{Tensor, TensorFile};
use crate::nn::{Act, Mlp, ParamTensor};
use crate::rng::{stream, Rng};
use crate::{Error, Result};
use ndarray::Array1;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub use gae::{compute_gae, compute_gae_direct};
pub use ppo::{ppo_update, RolloutBuffer, UpdateStats};
pub use train::{
    probe_asr, run_episode, train_amoeba, train_amoeba_with, write_training_log, EpisodeOutcome,
    IterationStats,
};

const LOG_STD_MIN: f32 = -5.0;
const LOG_STD_MAX: f32 = 2.0;
const LN_2PI: f64 = 1.8378770664093453;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct AgentConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_eps: f64,
    pub entropy_coef: f64,
    pub lr: f64,
    pub n_envs: usize,
    /// Rollout length per environment (T); buffer size is n_envs * T.
    pub rollout_steps: usize,
    /// Minibatches per update pass (K).
    pub minibatches: usize,
    pub update_epochs: usize,
    pub total_timesteps: usize,
    pub normalize_advantage: bool,
    pub grad_clip: f64,
    /// Sensitive flows scored per probe; ASR is fraction permitted.
    pub probe_flows: usize,
    /// Stop early once the probe ASR reaches this level.
    pub asr_target: Option<f64>,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_eps: 0.2,
            entropy_coef: 0.01,
            lr: 5e-4,
            n_envs: 8,
            rollout_steps: 256,
            minibatches: 8,
            update_epochs: 4,
            total_timesteps: 100_000,
            normalize_advantage: true,
            grad_clip: 0.5,
            probe_flows: 64,
            asr_target: None,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::Config("gamma must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(Error::Config("gae_lambda must lie in [0, 1]".into()));
        }
        if self.clip_eps <= 0.0 {
            return Err(Error::Config("clip_eps must be positive".into()));
        }
        if self.n_envs == 0 || self.rollout_steps == 0 || self.minibatches == 0 {
            return Err(Error::Config("rollout dimensions must be positive".into()));
        }
        if (self.n_envs * self.rollout_steps) % self.minibatches != 0 {
            return Err(Error::Config(format!(
                "buffer size {} not divisible into {} minibatches",
                self.n_envs * self.rollout_steps,
                self.minibatches
            )));
        }
        Ok(())
    }
}

/// Actor, critic and the frozen encoder they read states from.
/// States are ENC(observations) || ENC(actions), 2H wide.
pub struct PolicyBundle {
    pub encoder: StateEncoder,
    pub actor: Mlp,
    pub critic: Mlp,
    /// Per-dimension log standard deviation, state independent.
    pub log_std: ParamTensor,
    pub cfg: AgentConfig,
}

impl PolicyBundle {
    pub fn new(encoder: StateEncoder, cfg: AgentConfig, rng: &mut Rng) -> Result<Self> {
        cfg.validate()?;
        let state_dim = 2 * encoder.h;
        let actor = Mlp::new("actor", &[state_dim, 256, 64, 32, 2], Act::Tanh, Act::Identity, rng);
        let critic = Mlp::new("critic", &[state_dim, 256, 64, 32, 1], Act::Tanh, Act::Identity, rng);
        let mut log_std = ParamTensor::zeros("log_std", &[2]);
        log_std.value.fill(0.5f32.ln());
        Ok(PolicyBundle { encoder, actor, critic, log_std, cfg })
    }

    pub fn state_dim(&self) -> usize {
        2 * self.encoder.h
    }

    pub fn sigmas(&self) -> [f64; 2] {
        let v = self.log_std.as1();
        [(v[0] as f64).exp(), (v[1] as f64).exp()]
    }

    /// Squashes an unbounded Gaussian sample into the action box.
    pub fn squash(u: [f64; 2]) -> ShapeAction {
        ShapeAction {
            size_frac: u[0].tanh(),
            delta_delay_frac: 1.0 / (1.0 + (-u[1]).exp()),
        }
    }

    /// Log-density of the unsquashed sample under the current Gaussian.
    pub fn log_prob(&self, mean: [f64; 2], u: [f64; 2]) -> f64 {
        let sigma = self.sigmas();
        let mut lp = -LN_2PI;
        for d in 0..2 {
            let z = (u[d] - mean[d]) / sigma[d];
            lp += -0.5 * z * z - sigma[d].ln();
        }
        lp
    }

    /// Mean action for a single state (the actor trunk, no noise).
    pub fn actor_mean(&self, state: &Array1<f32>) -> Result<[f64; 2]> {
        if state.len() != self.state_dim() {
            return Err(Error::Input(format!(
                "state length {} != expected {}",
                state.len(),
                self.state_dim()
            )));
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite state".into()));
        }
        let x = state.view().insert_axis(ndarray::Axis(0)).to_owned();
        let y = self.actor.forward(&x);
        Ok([y[[0, 0]] as f64, y[[0, 1]] as f64])
    }

    pub fn value(&self, state: &Array1<f32>) -> Result<f64> {
        if state.len() != self.state_dim() {
            return Err(Error::Input("state length mismatch".into()));
        }
        let x = state.view().insert_axis(ndarray::Axis(0)).to_owned();
        Ok(self.critic.forward(&x)[[0, 0]] as f64)
    }

    /// Draws an action by the reparameterized rule u = mean + eps * sigma.
    /// Returns the squashed action, the raw sample and its log-density.
    pub fn sample_action(
        &self,
        state: &Array1<f32>,
        rng: &mut Rng,
    ) -> Result<(ShapeAction, [f64; 2], f64)> {
        let mean = self.actor_mean(state)?;
        let sigma = self.sigmas();
        let mut u = [0.0f64; 2];
        for d in 0..2 {
            let eps: f64 = StandardNormal.sample(rng);
            u[d] = mean[d] + eps * sigma[d];
        }
        let lp = self.log_prob(mean, u);
        Ok((Self::squash(u), u, lp))
    }

    /// Evaluation-mode action: the squashed mean.
    pub fn deterministic_action(&self, state: &Array1<f32>) -> Result<ShapeAction> {
        Ok(Self::squash(self.actor_mean(state)?))
    }

    pub fn clamp_log_std(&mut self) {
        self.log_std.value.mapv_inplace(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX));
    }

    fn own_tensors(&self) -> Vec<Tensor> {
        let mut ts: Vec<Tensor> = self.actor.params().iter().map(|p| p.to_tensor()).collect();
        ts.extend(self.critic.params().iter().map(|p| p.to_tensor()));
        ts.push(self.log_std.to_tensor());
        ts
    }

    /// Writes `policy.bin` and `encoder.bin` into `dir`. The policy file
    /// records the encoder file and its parameter checksum so a reload
    /// can verify it is paired with the exact frozen encoder.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let enc_path = dir.join("encoder.bin");
        self.encoder.save(&enc_path)?;
        let mut file = TensorFile::new(serde_json::json!({
            "kind": "policy",
            "h": self.encoder.h,
            "config": serde_json::to_value(&self.cfg).map_err(|e| Error::Checkpoint(e.to_string()))?,
            "encoder_file": "encoder.bin",
            "encoder_checksum": self.encoder.checksum(),
        }));
        for t in self.own_tensors() {
            file.push(t);
        }
        file.save(&dir.join("policy.bin"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let file = TensorFile::load(&dir.join("policy.bin"))?;
        if file.meta_str("kind")? != "policy" {
            return Err(Error::Checkpoint("not a policy checkpoint".into()));
        }
        let enc_file = file.meta_str("encoder_file")?.to_string();
        let encoder = StateEncoder::load(&dir.join(&enc_file))?;
        let want = file.meta_u64("encoder_checksum")?;
        if encoder.checksum() != want {
            return Err(Error::Checkpoint(format!(
                "encoder checksum {:#x} does not match the policy's recorded {:#x}",
                encoder.checksum(),
                want
            )));
        }
        let cfg: AgentConfig = serde_json::from_value(
            file.meta
                .get("config")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("policy checkpoint missing config".into()))?,
        )
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut scratch = stream(0, "policy-load-scratch");
        let mut bundle = PolicyBundle::new(encoder, cfg, &mut scratch)?;
        for p in bundle.actor.params_mut() {
            let name = p.name.clone();
            p.load_tensor(file.get(&name)?)?;
        }
        for p in bundle.critic.params_mut() {
            let name = p.name.clone();
            p.load_tensor(file.get(&name)?)?;
        }
        bundle.log_std.load_tensor(file.get("log_std")?)?;
        Ok(bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_bundle(h: usize) -> PolicyBundle {
        let mut rng = stream(3, "agent-test");
        let enc = StateEncoder::new(h, 2, &mut rng);
        PolicyBundle::new(enc, AgentConfig::default(), &mut rng).unwrap()
    }

    #[test]
    fn sample_mean_converges_to_actor_mean() {
        let bundle = tiny_bundle(8);
        let state = Array1::from_elem(16, 0.25f32);
        let mean = bundle.actor_mean(&state).unwrap();
        let sigma = bundle.sigmas();
        let mut rng = stream(4, "sample");
        let n = 10_000;
        let mut sums = [0.0f64; 2];
        for _ in 0..n {
            let (_, u, _) = bundle.sample_action(&state, &mut rng).unwrap();
            sums[0] += u[0];
            sums[1] += u[1];
        }
        for d in 0..2 {
            let emp = sums[d] / n as f64;
            let se = sigma[d] / (n as f64).sqrt();
            assert!(
                (emp - mean[d]).abs() < 3.0 * se,
                "dim {d}: empirical {emp} vs mean {} (se {se})",
                mean[d]
            );
        }
    }

    #[test]
    fn zero_noise_limit_returns_the_mean() {
        let mut bundle = tiny_bundle(8);
        bundle.log_std.value.fill(-40.0);
        let state = Array1::from_elem(16, -0.5f32);
        let mean = bundle.actor_mean(&state).unwrap();
        let mut rng = stream(5, "sample");
        let (a, u, _) = bundle.sample_action(&state, &mut rng).unwrap();
        assert!((u[0] - mean[0]).abs() < 1e-9);
        assert!((u[1] - mean[1]).abs() < 1e-9);
        let det = bundle.deterministic_action(&state).unwrap();
        assert!((a.size_frac - det.size_frac).abs() < 1e-9);
        assert!((a.delta_delay_frac - det.delta_delay_frac).abs() < 1e-9);
    }

    #[test]
    fn squash_respects_action_bounds_and_discretization() {
        // A raw sample whose tanh lands on 0.5 must emit 730 of 1460.
        let u0 = 0.5f64.atanh();
        let a = PolicyBundle::squash([u0, 0.0]);
        assert!((a.size_frac - 0.5).abs() < 1e-12);
        assert_eq!(((a.size_frac * 1460.0) + 1e-9).floor() as i64, 730);
        assert!((a.delta_delay_frac - 0.5).abs() < 1e-12);
        for u in [-50.0, -1.0, 0.0, 1.0, 50.0] {
            let a = PolicyBundle::squash([u, u]);
            assert!(a.size_frac >= -1.0 && a.size_frac <= 1.0);
            assert!(a.delta_delay_frac >= 0.0 && a.delta_delay_frac <= 1.0);
        }
    }

    #[test]
    fn log_prob_matches_the_gaussian_density() {
        let bundle = tiny_bundle(8);
        let sigma = bundle.sigmas();
        let mean = [0.3, -0.2];
        let u = [0.5, 0.1];
        let mut want = 0.0f64;
        for d in 0..2 {
            let z = (u[d] - mean[d]) / sigma[d];
            want += -0.5 * z * z - sigma[d].ln() - 0.5 * LN_2PI;
        }
        assert!((bundle.log_prob(mean, u) - want).abs() < 1e-12);
    }

    #[test]
    fn non_finite_state_is_rejected() {
        let bundle = tiny_bundle(8);
        let mut state = Array1::from_elem(16, 0.0f32);
        state[3] = f32::NAN;
        assert!(bundle.actor_mean(&state).is_err());
        let short = Array1::from_elem(7, 0.0f32);
        assert!(bundle.actor_mean(&short).is_err());
    }

    #[test]
    fn checkpoint_round_trip_verifies_the_encoder() {
        let bundle = tiny_bundle(8);
        let dir = tempfile::tempdir().unwrap();
        bundle.save(dir.path()).unwrap();
        let loaded = PolicyBundle::load(dir.path()).unwrap();
        let state = Array1::from_elem(16, 0.4f32);
        let a = bundle.deterministic_action(&state).unwrap();
        let b = loaded.deterministic_action(&state).unwrap();
        assert_eq!(a.size_frac, b.size_frac);
        assert_eq!(a.delta_delay_frac, b.delta_delay_frac);
        assert_eq!(bundle.value(&state).unwrap(), loaded.value(&state).unwrap());

        // A tampered encoder file must be refused.
        let mut rng = stream(99, "other-enc");
        let other = StateEncoder::new(8, 2, &mut rng);
        other.save(&dir.path().join("encoder.bin")).unwrap();
        assert!(matches!(PolicyBundle::load(dir.path()), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn config_validation_catches_bad_shapes() {
        let cfg = AgentConfig { n_envs: 3, rollout_steps: 10, minibatches: 7, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = AgentConfig { gamma: 0.0, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = AgentConfig::default();
        cfg.validate().unwrap();
    }
}
