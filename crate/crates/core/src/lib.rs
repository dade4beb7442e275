//! Desk-scale laboratory for adversarial traffic shaping.
//!
//! A black-box RL agent ("amoeba") reshapes network flows — splitting,
//! padding and delaying packets — so that ML censoring classifiers score
//! them as benign, while the original payload is still delivered in order.
//! The crate bundles everything needed to study the attack end to end:
//!
//! * [`flow`] — flow records, a synthetic two-class traffic generator,
//!   CSV ingest/export and stratified splits;
//! * [`features`] — a 166-entry statistical feature vector over a flow
//!   prefix, with a machine-readable manifest;
//! * [`censor`] — six classifier families (decision tree, random forest,
//!   dense autoencoder, conv net, LSTM, RBF-SVM) behind one scoring API;
//! * [`env`] — the packet-level shaping environment: constraint-preserving
//!   truncation/padding/delay mechanics and the decomposed reward;
//! * [`encoder`] — a recurrent sequence autoencoder pretrained on synthetic
//!   traffic; its frozen hidden state is the agent's flow memory;
//! * [`agent`] — actor-critic policy, GAE, PPO update and the training loop;
//! * [`eval`] — attack metrics (ASR, overheads), transfer matrices, reward
//!   masking sweeps, score ECDFs, action mixes and replayable shape profiles.
//!
//! Everything is seed-deterministic: identical configs and seeds reproduce
//! byte-identical datasets, checkpoints and CSV reports.

pub mod agent;
pub mod censor;
pub mod config;
pub mod encoder;
pub mod env;
pub mod eval;
pub mod features;
pub mod flow;
pub mod io;
pub mod nn;
pub mod rng;
pub mod svgplot;

use thiserror::Error;

/// Crate-wide error type. Variants map 1:1 onto FFI error codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error at {path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("training data contains a single class; both labels are required")]
    SingleClass,
    #[error("environment misuse: {0}")]
    Env(String),
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, Error>;
