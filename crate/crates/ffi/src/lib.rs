//! C ABI over the core lab. Every object crosses the boundary as an opaque
//! handle created by an `amoeba_*` constructor and released by the matching
//! `amoeba_*_free`. Functions return `AmoebaStatus`; on any non-OK status,
//! `amoeba_last_error` yields a thread-local message with the details.
//!
//! Pointer contracts: `out` parameters must be non-null; array parameters
//! must point at `len` readable elements; handles must not be used after
//! free. `amoeba_env_new` borrows its censor, which must outlive the env.

use amoeba_core::agent::{train_amoeba, AgentConfig, PolicyBundle};
use amoeba_core::censor::{evaluate_censor, train_censor, CensorKind, CensorModel, CensorTrainConfig, PrefixScorer};
use amoeba_core::encoder::{pretrain_encoder, EncoderPretrainConfig, StateEncoder};
use amoeba_core::env::{EnvConfig, ShapeAction, ShapingEnv, StepKind};
use amoeba_core::eval::{measure_attack, EvalPolicy};
use amoeba_core::flow::{generate_dataset, ingest_csv, write_csv, Dataset, Flow, GeneratorConfig, Label, Mode};
use amoeba_core::rng::stream;
use amoeba_core::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

/// Status code returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmoebaStatus {
    AmoebaOk = 0,
    AmoebaErrIo = 1,
    AmoebaErrParse = 2,
    AmoebaErrConfig = 3,
    AmoebaErrInput = 4,
    AmoebaErrSingleClass = 5,
    AmoebaErrEnv = 6,
    AmoebaErrCheckpoint = 7,
    AmoebaErrNull = 8,
    AmoebaErrUtf8 = 9,
    AmoebaErrPanic = 10,
}

/// Transport profile of a dataset / environment.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmoebaMode {
    AmoebaModeTcp = 0,
    AmoebaModeTls = 1,
}

impl From<AmoebaMode> for Mode {
    fn from(m: AmoebaMode) -> Mode {
        match m {
            AmoebaMode::AmoebaModeTcp => Mode::Tcp,
            AmoebaMode::AmoebaModeTls => Mode::Tls,
        }
    }
}

/// Everything one environment step reports back.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct AmoebaStepOut {
    /// Next observation; zeroed when `terminal` is set.
    pub pending_size: f64,
    pub base_delay: f64,
    /// 1 once the episode is over, else 0.
    pub terminal: i32,
    /// 0 = truncation, 1 = pass, 2 = padding.
    pub kind: i32,
    pub emitted_size: i64,
    pub emitted_delay_ms: f64,
    pub added_delay_ms: f64,
    /// Censor score of the emitted prefix, in [0, 1].
    pub score: f64,
    /// 1 when the reward's censor feedback was masked to 0.5.
    pub masked: i32,
    pub r_adv: f64,
    pub p_data: f64,
    pub p_time: f64,
    pub reward: f64,
}

/// Labeled flow dataset.
pub struct AmoebaDataset(Dataset);
/// Trained censoring classifier.
pub struct AmoebaCensor(CensorModel);
/// Pretrained flow-prefix encoder.
pub struct AmoebaEncoder(StateEncoder);
/// Trained shaping policy (actor, critic, encoder).
pub struct AmoebaPolicy(PolicyBundle);
/// Shaping environment bound to a borrowed censor.
pub struct AmoebaEnv(ShapingEnv<'static>);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> AmoebaStatus {
    match err {
        Error::Io(_) => AmoebaStatus::AmoebaErrIo,
        Error::Parse { .. } => AmoebaStatus::AmoebaErrParse,
        Error::Config(_) => AmoebaStatus::AmoebaErrConfig,
        Error::Input(_) => AmoebaStatus::AmoebaErrInput,
        Error::SingleClass => AmoebaStatus::AmoebaErrSingleClass,
        Error::Env(_) => AmoebaStatus::AmoebaErrEnv,
        Error::Checkpoint(_) => AmoebaStatus::AmoebaErrCheckpoint,
    }
}

fn fail(err: Error) -> AmoebaStatus {
    let code = status_of(&err);
    set_error(err.to_string());
    code
}

fn fail_null(what: &str) -> AmoebaStatus {
    set_error(format!("null pointer: {what}"));
    AmoebaStatus::AmoebaErrNull
}

/// Runs a fallible body under a panic guard.
fn guarded(f: impl FnOnce() -> Result<(), AmoebaStatus>) -> AmoebaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AmoebaStatus::AmoebaOk,
        Ok(Err(code)) => code,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            AmoebaStatus::AmoebaErrPanic
        }
    }
}

macro_rules! need {
    ($ptr:expr, $name:literal) => {
        match unsafe { $ptr.as_ref() } {
            Some(r) => r,
            None => return Err(fail_null($name)),
        }
    };
}

macro_rules! need_mut {
    ($ptr:expr, $name:literal) => {
        match unsafe { $ptr.as_mut() } {
            Some(r) => r,
            None => return Err(fail_null($name)),
        }
    };
}

fn c_str<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, AmoebaStatus> {
    if ptr.is_null() {
        return Err(fail_null(name));
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|_| {
        set_error(format!("{name} is not valid UTF-8"));
        AmoebaStatus::AmoebaErrUtf8
    })
}

fn slice<'a, T>(ptr: *const T, len: usize, name: &str) -> Result<&'a [T], AmoebaStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(fail_null(name));
    }
    Ok(unsafe { std::slice::from_raw_parts(ptr, len) })
}

fn give<H>(out: *mut *mut H, handle: H, name: &str) -> Result<(), AmoebaStatus> {
    if out.is_null() {
        return Err(fail_null(name));
    }
    unsafe { *out = Box::into_raw(Box::new(handle)) };
    Ok(())
}

/// Message describing the most recent failure on this thread. Valid until
/// the next failing call from the same thread; never null.
#[no_mangle]
pub extern "C" fn amoeba_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static `major.minor.patch` string.
#[no_mangle]
pub extern "C" fn amoeba_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

// --- dataset -----------------------------------------------------------

/// Generates a synthetic labeled dataset of `n_flows` flows (half of them
/// sensitive) with the default generator settings for `mode`.
#[no_mangle]
pub extern "C" fn amoeba_dataset_generate(
    n_flows: usize,
    mode: AmoebaMode,
    seed: u64,
    out: *mut *mut AmoebaDataset,
) -> AmoebaStatus {
    guarded(|| {
        let cfg = GeneratorConfig { n_flows, ..GeneratorConfig::for_mode(mode.into()) };
        let data = generate_dataset(&cfg, seed).map_err(fail)?;
        give(out, AmoebaDataset(data), "out")
    })
}

/// Reads a dataset from the CSV layout written by `amoeba_dataset_save_csv`.
#[no_mangle]
pub extern "C" fn amoeba_dataset_load_csv(
    path: *const c_char,
    mode: AmoebaMode,
    out: *mut *mut AmoebaDataset,
) -> AmoebaStatus {
    guarded(|| {
        let path = c_str(path, "path")?;
        let data = ingest_csv(Path::new(path), mode.into()).map_err(fail)?;
        give(out, AmoebaDataset(data), "out")
    })
}

/// Writes the dataset as CSV (one row per packet).
#[no_mangle]
pub extern "C" fn amoeba_dataset_save_csv(
    dataset: *const AmoebaDataset,
    path: *const c_char,
) -> AmoebaStatus {
    guarded(|| {
        let ds = need!(dataset, "dataset");
        let path = c_str(path, "path")?;
        write_csv(&ds.0, Path::new(path)).map_err(fail)
    })
}

/// Number of flows; 0 for a null handle.
#[no_mangle]
pub extern "C" fn amoeba_dataset_len(dataset: *const AmoebaDataset) -> usize {
    unsafe { dataset.as_ref() }.map_or(0, |d| d.0.flows.len())
}

/// Borrows one flow's packet arrays. The views stay valid until the dataset
/// is freed. `label` is 0 for benign, 1 for sensitive.
#[no_mangle]
pub extern "C" fn amoeba_dataset_flow(
    dataset: *const AmoebaDataset,
    index: usize,
    sizes: *mut *const i64,
    delays_ms: *mut *const f64,
    len: *mut usize,
    label: *mut i32,
) -> AmoebaStatus {
    guarded(|| {
        let ds = need!(dataset, "dataset");
        if sizes.is_null() || delays_ms.is_null() || len.is_null() || label.is_null() {
            return Err(fail_null("output parameter"));
        }
        let flow = ds.0.flows.get(index).ok_or_else(|| {
            fail(Error::Input(format!("flow index {index} out of range 0..{}", ds.0.flows.len())))
        })?;
        unsafe {
            *sizes = flow.sizes.as_ptr();
            *delays_ms = flow.delays_ms.as_ptr();
            *len = flow.sizes.len();
            *label = match flow.label {
                Label::Benign => 0,
                Label::Sensitive => 1,
            };
        }
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn amoeba_dataset_free(dataset: *mut AmoebaDataset) {
    if !dataset.is_null() {
        drop(unsafe { Box::from_raw(dataset) });
    }
}

// --- censor ------------------------------------------------------------

/// Trains a censor on the dataset. `kind` is one of "dt", "rf", "cumul",
/// "sdae", "df", "lstm".
#[no_mangle]
pub extern "C" fn amoeba_censor_train(
    dataset: *const AmoebaDataset,
    kind: *const c_char,
    seed: u64,
    out: *mut *mut AmoebaCensor,
) -> AmoebaStatus {
    guarded(|| {
        let ds = need!(dataset, "dataset");
        let kind = CensorKind::parse(c_str(kind, "kind")?).map_err(fail)?;
        let model = train_censor(kind, &ds.0, &CensorTrainConfig::default(), seed).map_err(fail)?;
        give(out, AmoebaCensor(model), "out")
    })
}

/// Scores a flow prefix; 1 reads as sensitive. The censor blocks when the
/// score exceeds 0.5.
#[no_mangle]
pub extern "C" fn amoeba_censor_score(
    censor: *const AmoebaCensor,
    sizes: *const i64,
    delays_ms: *const f64,
    len: usize,
    score: *mut f64,
) -> AmoebaStatus {
    guarded(|| {
        let c = need!(censor, "censor");
        let sizes = slice(sizes, len, "sizes")?;
        let delays = slice(delays_ms, len, "delays_ms")?;
        if score.is_null() {
            return Err(fail_null("score"));
        }
        let s = c.0.score_prefix(sizes, delays).map_err(fail)?;
        unsafe { *score = s };
        Ok(())
    })
}

/// Evaluates the censor on a labeled dataset. `metrics` receives
/// [accuracy, precision, recall, f1].
#[no_mangle]
pub extern "C" fn amoeba_censor_metrics(
    censor: *const AmoebaCensor,
    dataset: *const AmoebaDataset,
    metrics: *mut f64,
) -> AmoebaStatus {
    guarded(|| {
        let c = need!(censor, "censor");
        let ds = need!(dataset, "dataset");
        if metrics.is_null() {
            return Err(fail_null("metrics"));
        }
        let m = evaluate_censor(&c.0, &ds.0).map_err(fail)?;
        let out = unsafe { std::slice::from_raw_parts_mut(metrics, 4) };
        out.copy_from_slice(&[m.accuracy, m.precision, m.recall, m.f1]);
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn amoeba_censor_save(censor: *const AmoebaCensor, path: *const c_char) -> AmoebaStatus {
    guarded(|| {
        let c = need!(censor, "censor");
        let path = c_str(path, "path")?;
        c.0.save(Path::new(path)).map_err(fail)
    })
}

#[no_mangle]
pub extern "C" fn amoeba_censor_load(path: *const c_char, out: *mut *mut AmoebaCensor) -> AmoebaStatus {
    guarded(|| {
        let path = c_str(path, "path")?;
        let model = CensorModel::load(Path::new(path)).map_err(fail)?;
        give(out, AmoebaCensor(model), "out")
    })
}

#[no_mangle]
pub extern "C" fn amoeba_censor_free(censor: *mut AmoebaCensor) {
    if !censor.is_null() {
        drop(unsafe { Box::from_raw(censor) });
    }
}

// --- encoder -----------------------------------------------------------

/// Pretrains the recurrent flow encoder on synthetic sequences. `h` is the
/// hidden width, `epochs` the training epochs, `n_train` the corpus size.
#[no_mangle]
pub extern "C" fn amoeba_encoder_pretrain(
    h: usize,
    epochs: usize,
    n_train: usize,
    seed: u64,
    out: *mut *mut AmoebaEncoder,
) -> AmoebaStatus {
    guarded(|| {
        let cfg = EncoderPretrainConfig {
            h,
            epochs,
            n_train,
            n_test: (n_train / 5).max(8),
            seed,
            ..EncoderPretrainConfig::default()
        };
        let (encoder, _decoder, _report) = pretrain_encoder(&cfg).map_err(fail)?;
        give(out, AmoebaEncoder(encoder), "out")
    })
}

#[no_mangle]
pub extern "C" fn amoeba_encoder_save(encoder: *const AmoebaEncoder, path: *const c_char) -> AmoebaStatus {
    guarded(|| {
        let e = need!(encoder, "encoder");
        let path = c_str(path, "path")?;
        e.0.save(Path::new(path)).map_err(fail)
    })
}

#[no_mangle]
pub extern "C" fn amoeba_encoder_load(path: *const c_char, out: *mut *mut AmoebaEncoder) -> AmoebaStatus {
    guarded(|| {
        let path = c_str(path, "path")?;
        let enc = StateEncoder::load(Path::new(path)).map_err(fail)?;
        give(out, AmoebaEncoder(enc), "out")
    })
}

#[no_mangle]
pub extern "C" fn amoeba_encoder_free(encoder: *mut AmoebaEncoder) {
    if !encoder.is_null() {
        drop(unsafe { Box::from_raw(encoder) });
    }
}

// --- environment -------------------------------------------------------

/// Creates a shaping environment that queries `censor` for rewards.
/// The censor is borrowed: it must stay alive until `amoeba_env_free`.
#[no_mangle]
pub extern "C" fn amoeba_env_new(
    censor: *const AmoebaCensor,
    mode: AmoebaMode,
    p_mask: f64,
    seed: u64,
    out: *mut *mut AmoebaEnv,
) -> AmoebaStatus {
    guarded(|| {
        let c = need!(censor, "censor");
        // Lifetime erased; the documented contract makes the caller keep
        // the censor alive for as long as the env.
        let scorer: &'static CensorModel = unsafe { std::mem::transmute(&c.0) };
        let mut cfg = EnvConfig::for_mode(mode.into());
        cfg.p_mask = p_mask;
        let env = ShapingEnv::new(scorer, cfg, seed).map_err(fail)?;
        give(out, AmoebaEnv(env), "out")
    })
}

/// Starts an episode on the given original flow. `delays_ms[0]` must be 0.
/// `obs` receives [pending_size, base_delay].
#[no_mangle]
pub extern "C" fn amoeba_env_reset(
    env: *mut AmoebaEnv,
    sizes: *const i64,
    delays_ms: *const f64,
    len: usize,
    obs: *mut f64,
) -> AmoebaStatus {
    guarded(|| {
        let e = need_mut!(env, "env");
        let sizes = slice(sizes, len, "sizes")?.to_vec();
        let delays = slice(delays_ms, len, "delays_ms")?.to_vec();
        if obs.is_null() {
            return Err(fail_null("obs"));
        }
        let flow = Flow::new(0, sizes, delays, Label::Sensitive).map_err(fail)?;
        let o = e.0.reset(flow).map_err(fail)?;
        unsafe {
            *obs = o.pending_size;
            *obs.add(1) = o.base_delay;
        }
        Ok(())
    })
}

/// Applies one shaping action. `size_frac` in [-1, 1] picks the emitted
/// size (sign is overridden by the payload direction); `delta_delay_frac`
/// in [0, 1] adds that fraction of the delay budget.
#[no_mangle]
pub extern "C" fn amoeba_env_step(
    env: *mut AmoebaEnv,
    size_frac: f64,
    delta_delay_frac: f64,
    out: *mut AmoebaStepOut,
) -> AmoebaStatus {
    guarded(|| {
        let e = need_mut!(env, "env");
        if out.is_null() {
            return Err(fail_null("out"));
        }
        let r = e.0.step(ShapeAction { size_frac, delta_delay_frac }).map_err(fail)?;
        let (pending, base) = match &r.obs {
            Some(o) => (o.pending_size, o.base_delay),
            None => (0.0, 0.0),
        };
        unsafe {
            *out = AmoebaStepOut {
                pending_size: pending,
                base_delay: base,
                terminal: r.obs.is_none() as i32,
                kind: match r.info.kind {
                    StepKind::Truncation => 0,
                    StepKind::Pass => 1,
                    StepKind::Padding => 2,
                },
                emitted_size: r.info.emitted_size,
                emitted_delay_ms: r.info.emitted_delay_ms,
                added_delay_ms: r.info.added_delay_ms,
                score: r.info.score,
                masked: r.info.masked as i32,
                r_adv: r.reward.r_adv,
                p_data: r.reward.p_data,
                p_time: r.reward.p_time,
                reward: r.reward.total,
            };
        }
        Ok(())
    })
}

#[no_mangle]
pub extern "C" fn amoeba_env_free(env: *mut AmoebaEnv) {
    if !env.is_null() {
        drop(unsafe { Box::from_raw(env) });
    }
}

// --- policy ------------------------------------------------------------

/// Trains a shaping policy against the censor on the dataset's sensitive
/// flows for `total_timesteps` environment steps.
#[no_mangle]
pub extern "C" fn amoeba_policy_train(
    censor: *const AmoebaCensor,
    encoder: *const AmoebaEncoder,
    dataset: *const AmoebaDataset,
    total_timesteps: usize,
    seed: u64,
    out: *mut *mut AmoebaPolicy,
) -> AmoebaStatus {
    guarded(|| {
        let c = need!(censor, "censor");
        let enc = need!(encoder, "encoder");
        let ds = need!(dataset, "dataset");
        let attack: Vec<Flow> =
            ds.0.flows.iter().filter(|f| f.label == Label::Sensitive).cloned().collect();
        if attack.is_empty() {
            return Err(fail(Error::Input("dataset has no sensitive flows".into())));
        }
        let probe: Vec<Flow> = attack.iter().take(8).cloned().collect();
        let cfg = AgentConfig { total_timesteps, seed, ..AgentConfig::default() };
        let env_cfg = EnvConfig::for_mode(ds.0.mode);
        let mut init = stream(seed, "bundle-init");
        let mut bundle = PolicyBundle::new(enc.0.clone(), cfg, &mut init).map_err(fail)?;
        train_amoeba(&c.0, &env_cfg, &attack, &probe, &mut bundle).map_err(fail)?;
        give(out, AmoebaPolicy(bundle), "out")
    })
}

/// Shapes every sensitive flow in the dataset with the trained policy and
/// measures the attack. `stats` receives [attack success rate,
/// data overhead, time overhead, early block rate].
#[no_mangle]
pub extern "C" fn amoeba_policy_attack(
    policy: *const AmoebaPolicy,
    censor: *const AmoebaCensor,
    dataset: *const AmoebaDataset,
    stats: *mut f64,
) -> AmoebaStatus {
    guarded(|| {
        let p = need!(policy, "policy");
        let c = need!(censor, "censor");
        let ds = need!(dataset, "dataset");
        if stats.is_null() {
            return Err(fail_null("stats"));
        }
        let flows: Vec<Flow> =
            ds.0.flows.iter().filter(|f| f.label == Label::Sensitive).cloned().collect();
        let env_cfg = EnvConfig::for_mode(ds.0.mode);
        let report =
            measure_attack(&EvalPolicy::Trained(&p.0), &c.0, &env_cfg, &flows).map_err(fail)?;
        let out = unsafe { std::slice::from_raw_parts_mut(stats, 4) };
        out.copy_from_slice(&[
            report.asr,
            report.data_overhead,
            report.time_overhead,
            report.early_block_rate,
        ]);
        Ok(())
    })
}

/// Saves the policy (actor, critic, encoder, config) into a directory.
#[no_mangle]
pub extern "C" fn amoeba_policy_save(policy: *const AmoebaPolicy, dir: *const c_char) -> AmoebaStatus {
    guarded(|| {
        let p = need!(policy, "policy");
        let dir = c_str(dir, "dir")?;
        p.0.save(Path::new(dir)).map_err(fail)
    })
}

#[no_mangle]
pub extern "C" fn amoeba_policy_load(dir: *const c_char, out: *mut *mut AmoebaPolicy) -> AmoebaStatus {
    guarded(|| {
        let dir = c_str(dir, "dir")?;
        let bundle = PolicyBundle::load(Path::new(dir)).map_err(fail)?;
        give(out, AmoebaPolicy(bundle), "out")
    })
}

#[no_mangle]
pub extern "C" fn amoeba_policy_free(policy: *mut AmoebaPolicy) {
    if !policy.is_null() {
        drop(unsafe { Box::from_raw(policy) });
    }
}
