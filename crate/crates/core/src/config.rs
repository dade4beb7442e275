//! One TOML file drives the whole pipeline: each section mirrors a
//! library config type, every key is optional, and an absent section
//! means its defaults. `[eval]` holds the harness-level knobs that no
//! single library type owns.

use crate::agent::AgentConfig;
use crate::censor::{CensorKind, CensorTrainConfig};
use crate::encoder::EncoderPretrainConfig;
use crate::env::EnvConfig;
use crate::flow::GeneratorConfig;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Censor to train or attack.
    pub censor: String,
    /// Censors on the transfer matrix axes.
    pub transfer_censors: Vec<String>,
    /// Reward-mask rates for the sweep.
    pub mask_rates: Vec<f64>,
    /// Training repeats per mask rate.
    pub mask_repeats: usize,
    /// Features reported by the importance analysis.
    pub top_k_features: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            censor: "dt".into(),
            transfer_censors: vec!["dt".into(), "rf".into()],
            mask_rates: vec![0.0, 0.5, 0.9],
            mask_repeats: 1,
            top_k_features: 20,
        }
    }
}

impl EvalConfig {
    pub fn censor_kind(&self) -> Result<CensorKind> {
        CensorKind::parse(&self.censor)
    }

    pub fn transfer_kinds(&self) -> Result<Vec<CensorKind>> {
        self.transfer_censors.iter().map(|s| CensorKind::parse(s)).collect()
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct AppConfig {
    pub generator: GeneratorConfig,
    pub censor: CensorTrainConfig,
    pub encoder: EncoderPretrainConfig,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub eval: EvalConfig,
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<AppConfig> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = toml::to_string_pretty(self)
            .map_err(|e| Error::Config(format!("config serialization: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_yields_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.toml");
        std::fs::write(&path, "").unwrap();
        let cfg = AppConfig::load(&path).unwrap();
        assert_eq!(cfg.generator.n_flows, GeneratorConfig::default().n_flows);
        assert_eq!(cfg.eval.censor, "dt");
    }

    #[test]
    fn partial_sections_override_only_named_keys() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("partial.toml");
        std::fs::write(
            &path,
            "[generator]\nn_flows = 64\n\n[agent]\ntotal_timesteps = 4096\n\n[eval]\ncensor = \"rf\"\n",
        )
        .unwrap();
        let cfg = AppConfig::load(&path).unwrap();
        assert_eq!(cfg.generator.n_flows, 64);
        assert_eq!(cfg.agent.total_timesteps, 4096);
        assert_eq!(cfg.generator.min_len, GeneratorConfig::default().min_len);
        assert_eq!(cfg.eval.censor_kind().unwrap(), CensorKind::Rf);
    }

    #[test]
    fn roundtrips_through_save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("round.toml");
        let mut cfg = AppConfig::default();
        cfg.agent.seed = 99;
        cfg.eval.mask_rates = vec![0.25];
        cfg.save(&path).unwrap();
        let back = AppConfig::load(&path).unwrap();
        assert_eq!(back.agent.seed, 99);
        assert_eq!(back.eval.mask_rates, vec![0.25]);
    }

    #[test]
    fn bad_toml_reports_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "[generator\nn_flows = 64").unwrap();
        let err = AppConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("bad.toml"));
    }

    #[test]
    fn unknown_censor_name_is_rejected() {
        let cfg = EvalConfig { censor: "svm9000".into(), ..Default::default() };
        assert!(cfg.censor_kind().is_err());
    }
}
