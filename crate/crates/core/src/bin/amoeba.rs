//! Experiment harness. Every stage is a subcommand that reads earlier
//! stages' artifacts from --out-dir and writes its own there: models as
//! binary checkpoints, measurements as CSV tables. `report` renders the
//! CSV tables it finds into SVG plots, so the compute stages stay
//! plot-free and byte-stable.

use amoeba_core::agent::{train_amoeba_with, write_training_log, PolicyBundle};
use amoeba_core::censor::{evaluate_censor, train_censor, CensorKind, CensorModel};
use amoeba_core::config::AppConfig;
use amoeba_core::encoder::{pretrain_encoder_with, StateEncoder};
use amoeba_core::eval::{
    build_profiles, feature_importance_report, mask_sweep, measure_attack, replay_profiles,
    transfer_matrix, EvalPolicy, ProfileStore,
};
use amoeba_core::flow::{generate_dataset, ingest_csv, split_dataset, write_csv, Dataset, Label};
use amoeba_core::rng::stream;
use amoeba_core::svgplot::{ecdf_plot, heatmap, histogram, line_plot, save_svg, Series};
use amoeba_core::{Error, Result};
use clap::{Args, Parser, Subcommand};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "amoeba", version, about = "RL traffic shaping against ML flow censors")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML config file; absent keys fall back to built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed for this stage (generation, splits, training).
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Artifact directory shared by all stages.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic labeled flow dataset.
    GenData(Common),
    /// Pretrain the state encoder on synthetic sequences.
    TrainEncoder(Common),
    /// Train the configured censor classifier.
    TrainCensor(Common),
    /// Train the shaping agent against the trained censor.
    TrainAgent(Common),
    /// Attack held-out flows with the trained policy and measure it.
    Eval(Common),
    /// Cross-censor transfer matrix over the trained policies.
    Transfer(Common),
    /// Retrain at several reward-mask rates and compare ASR.
    MaskSweep(Common),
    /// Replay stored adversarial profiles over held-out payloads.
    ReplayProfiles(Common),
    /// Render SVG plots from the CSV tables in the output directory.
    Report(Common),
}

fn main() {
    let cli = Cli::parse();
    let run = match &cli.cmd {
        Cmd::GenData(c) => gen_data(c),
        Cmd::TrainEncoder(c) => train_encoder(c),
        Cmd::TrainCensor(c) => train_censor_cmd(c),
        Cmd::TrainAgent(c) => train_agent(c),
        Cmd::Eval(c) => eval_cmd(c),
        Cmd::Transfer(c) => transfer_cmd(c),
        Cmd::MaskSweep(c) => mask_sweep_cmd(c),
        Cmd::ReplayProfiles(c) => replay_cmd(c),
        Cmd::Report(c) => report_cmd(c),
    };
    if let Err(e) = run {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

// --- shared plumbing --------------------------------------------------------

fn setup(c: &Common) -> Result<AppConfig> {
    std::fs::create_dir_all(&c.out_dir)?;
    match &c.config {
        Some(path) => AppConfig::load(path),
        None => Ok(AppConfig::default()),
    }
}

fn flows_path(c: &Common) -> PathBuf {
    c.out_dir.join("flows.csv")
}

fn censor_path(c: &Common, kind: CensorKind) -> PathBuf {
    c.out_dir.join(format!("censor-{kind}.bin"))
}

fn policy_dir(c: &Common, kind: CensorKind) -> PathBuf {
    c.out_dir.join(format!("policy-{kind}"))
}

fn load_dataset(c: &Common, cfg: &AppConfig) -> Result<Dataset> {
    let path = flows_path(c);
    if !path.exists() {
        return Err(Error::Input(format!("{} not found; run gen-data first", path.display())));
    }
    ingest_csv(&path, cfg.generator.mode)
}

fn load_censor(c: &Common, kind: CensorKind) -> Result<CensorModel> {
    let path = censor_path(c, kind);
    if !path.exists() {
        return Err(Error::Input(format!(
            "{} not found; run train-censor with eval.censor = \"{kind}\" first",
            path.display()
        )));
    }
    CensorModel::load(&path)
}

fn load_encoder(c: &Common) -> Result<StateEncoder> {
    let path = c.out_dir.join("encoder.bin");
    if !path.exists() {
        return Err(Error::Input(format!(
            "{} not found; run train-encoder first",
            path.display()
        )));
    }
    StateEncoder::load(&path)
}

fn load_policy(c: &Common, kind: CensorKind) -> Result<PolicyBundle> {
    let dir = policy_dir(c, kind);
    if !dir.exists() {
        return Err(Error::Input(format!(
            "{} not found; run train-agent with eval.censor = \"{kind}\" first",
            dir.display()
        )));
    }
    PolicyBundle::load(&dir)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}

/// Minimal CSV reader for the harness's own tables: header + rows,
/// comma-separated, no quoting (none of our tables need it).
fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: 1,
            msg: "empty file".into(),
        })?
        .split(',')
        .map(str::to_string)
        .collect();
    let rows = lines
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    Ok((header, rows))
}

fn col(header: &[String], rows: &[Vec<String>], name: &str, path: &Path) -> Result<Vec<f64>> {
    let idx = header.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
        path: path.display().to_string(),
        line: 1,
        msg: format!("missing column {name}"),
    })?;
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            r[idx].parse::<f64>().map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 2,
                msg: format!("{name}: {e}"),
            })
        })
        .collect()
}

// --- stages -----------------------------------------------------------------

fn gen_data(c: &Common) -> Result<()> {
    let cfg = setup(c)?;
    let data = generate_dataset(&cfg.generator, c.seed)?;
    write_csv(&data, &flows_path(c))?;
    println!(
        "wrote {} ({} flows: {} sensitive, {} benign)",
        flows_path(c).display(),
        data.len(),
        data.count_label(Label::Sensitive),
        data.count_label(Label::Benign),
    );
    Ok(())
}

fn train_encoder(c: &Common) -> Result<()> {
    let cfg = setup(c)?;
    let mut ecfg = cfg.encoder.clone();
    ecfg.seed = c.seed;
    println!("pretraining encoder: h={} layers={} epochs={}", ecfg.h, ecfg.layers, ecfg.epochs);
    let (enc, dec, report) = pretrain_encoder_with(&ecfg, |done, loss, probe, _, _| {
        match probe {
            Some(n) => println!("epoch {done}/{}: loss {loss:.6} test-nmae {n:.4}", ecfg.epochs),
            None => println!("epoch {done}/{}: loss {loss:.6}", ecfg.epochs),
        }
        let _ = std::io::stdout().flush();
    })?;
    enc.save(&c.out_dir.join("encoder.bin"))?;
    dec.save(&c.out_dir.join("decoder.bin"))?;

    let mut csv = String::from("epoch,loss,nmae\n");
    let _ = writeln!(csv, "0,,{:.9}", report.initial_nmae);
    for (i, loss) in report.epoch_losses.iter().enumerate() {
        let epoch = i + 1;
        let probe = report.nmae_probes.iter().find(|(e, _)| *e == epoch).map(|(_, n)| *n);
        let probe = if epoch == ecfg.epochs { Some(report.final_nmae) } else { probe };
        match probe {
            Some(n) => {
                let _ = writeln!(csv, "{epoch},{loss:.9},{n:.9}");
            }
            None => {
                let _ = writeln!(csv, "{epoch},{loss:.9},");
            }
        }
    }
    write_text(&c.out_dir.join("encoder_pretrain.csv"), &csv)?;
    println!(
        "saved encoder.bin + decoder.bin; test NMAE {:.4} -> {:.4}",
        report.initial_nmae, report.final_nmae
    );
    Ok(())
}

fn train_censor_cmd(c: &Common) -> Result<()> {
    let cfg = setup(c)?;
    let kind = cfg.eval.censor_kind()?;
    let data = load_dataset(c, &cfg)?;
    let splits = split_dataset(&data, c.seed)?;
    println!("training {kind} on {} flows", splits.clf_train.len());
    let model = train_censor(kind, &splits.clf_train, &cfg.censor, c.seed)?;
    let m = evaluate_censor(&model, &splits.test)?;
    model.save(&censor_path(c, kind))?;

    let csv = format!(
        "censor,f1,accuracy,precision,recall\n{kind},{:.9},{:.9},{:.9},{:.9}\n",
        m.f1, m.accuracy, m.precision, m.recall
    );
    write_text(&c.out_dir.join(format!("censor_metrics-{kind}.csv")), &csv)?;
    println!("{kind}: f1={:.4} accuracy={:.4} (test split, n={})", m.f1, m.accuracy, splits.test.len());

    if model.importances().is_ok() {
        let top = feature_importance_report(&model, cfg.eval.top_k_features)?;
        let mut csv = String::from("rank,feature,importance,category\n");
        for (i, f) in top.top.iter().enumerate() {
            let cat = if f.is_packet { "packet" } else { "timing" };
            let _ = writeln!(csv, "{},{},{:.9},{cat}", i + 1, f.name, f.importance);
        }
        write_text(&c.out_dir.join(format!("feature_importance-{kind}.csv")), &csv)?;
        println!(
            "top {} features: {} packet / {} timing",
            top.top.len(),
            top.packet_count,
            top.timing_count
        );
    }
    Ok(())
}

fn train_agent(c: &Common) -> Result<()> {
    let cfg = setup(c)?;
    let kind = cfg.eval.censor_kind()?;
    let censor = load_censor(c, kind)?;
    let encoder = load_encoder(c)?;
    let data = load_dataset(c, &cfg)?;
    let splits = split_dataset(&data, c.seed)?;
    let attack = splits.attack_train.filter_label(Label::Sensitive).flows;
    let probe = splits.validation.filter_label(Label::Sensitive).flows;

    let mut acfg = cfg.agent.clone();
    acfg.seed = c.seed;
    println!(
        "training agent vs {kind}: {} timesteps, {} lanes x {} steps",
        acfg.total_timesteps, acfg.n_envs, acfg.rollout_steps
    );
    let mut bundle = PolicyBundle::new(encoder, acfg, &mut stream(c.seed, "bundle-init"))?;
    let stats = train_amoeba_with(&censor, &cfg.env, &attack, &probe, &mut bundle, |s| {
        println!(
            "iter {:4}  t={:7}  reward {:+8.3}  probe-asr {:.3}  clip {:.3}",
            s.iteration, s.timesteps, s.mean_reward, s.probe_asr, s.clip_frac
        );
        let _ = std::io::stdout().flush();
    })?;
    bundle.save(&policy_dir(c, kind))?;
    write_training_log(&c.out_dir.join(format!("training_log-{kind}.csv")), &stats)?;
    let last = stats.last().expect("at least one iteration");
    println!(
        "saved policy-{kind} after {} timesteps; final probe ASR {:.3}",
        last.timesteps, last.probe_asr
    );
    Ok(())
}

fn eval_cmd(c: &Common) -> Result<()> {
    let cfg = setup(c)?;
    let kind = cfg.eval.censor_kind()?;
    let censor = load_censor(c, kind)?;
    let bundle = load_policy(c, kind)?;
    let data = load_dataset(c, &cfg)?;
    let splits = split_dataset(&data, c.seed)?;
    let test = splits.test.filter_label(Label::Sensitive).flows;

    let report = measure_attack(&EvalPolicy::Trained(&bundle), &censor, &cfg.env, &test)?;
    let mut csv = String::from(
        "id,permitted,score,early_block,steps,truncations,paddings,delay_actions,\
         original_bytes,padding_bytes,original_duration_ms,added_delay_ms\n",
    );
    for f in &report.flows {
        let _ = writeln!(
            csv,
            "{},{},{:.9},{},{},{},{},{},{},{},{:.9},{:.9}",
            f.id,
            f.permitted as u8,
            f.score,
            f.early_block as u8,
            f.steps,
            f.truncations,
            f.paddings,
            f.delay_actions,
            f.original_bytes,
            f.padding_bytes,
            f.original_duration_ms,
            f.added_delay_ms
        );
    }
    write_text(&c.out_dir.join(format!("attack_flows-{kind}.csv")), &csv)?;
    let summary = format!(
        "censor,asr,data_overhead,time_overhead,early_block_rate,n_flows\n\
         {kind},{:.9},{:.9},{:.9},{:.9},{}\n",
        report.asr, report.data_overhead, report.time_overhead, report.early_block_rate,
        report.n_flows
    );
    write_text(&c.out_dir.join(format!("attack_summary-{kind}.csv")), &summary)?;
    println!(
        "vs {kind}: asr={:.3} data-overhead={:.3} time-overhead={:.3} early-block={:.3} (n={})",
        report.asr, report.data_overhead, report.time_overhead, report.early_block_rate,
        report.n_flows
    );

    match build_profiles(&report, &kind.to_string()) {
        Ok(store) => {
            store.save(&c.out_dir.join(format!("profiles-{kind}.json")))?;
            println!("stored {} adversarial profiles", store.profiles.len());
        }
        Err(_) => println!("no successful flows; profile store not written"),
    }
    Ok(())
}

fn transfer_cmd(c: &Common) -> Result<()> {
    let cfg = setup(c)?;
    let kinds = cfg.eval.transfer_kinds()?;
    let data = load_dataset(c, &cfg)?;
    let splits = split_dataset(&data, c.seed)?;
    let test = splits.test.filter_label(Label::Sensitive).flows;

    let mut policies: Vec<(String, PolicyBundle)> = Vec::new();
    for &kind in &kinds {
        if policy_dir(c, kind).exists() {
            policies.push((kind.to_string(), load_policy(c, kind)?));
        } else {
            println!("no policy-{kind}; row skipped");
        }
    }
    if policies.is_empty() {
        return Err(Error::Input("no trained policies found for the configured censors".into()));
    }
    let mut censors: Vec<(String, CensorModel)> = Vec::new();
    for &kind in &kinds {
        let model = if censor_path(c, kind).exists() {
            load_censor(c, kind)?
        } else {
            println!("training missing censor {kind}");
            let model = train_censor(kind, &splits.clf_train, &cfg.censor, c.seed)?;
            model.save(&censor_path(c, kind))?;
            model
        };
        censors.push((kind.to_string(), model));
    }

    let policy_refs: Vec<(String, &PolicyBundle)> =
        policies.iter().map(|(n, b)| (n.clone(), b)).collect();
    let censor_refs: Vec<(String, &dyn amoeba_core::censor::PrefixScorer)> =
        censors.iter().map(|(n, m)| (n.clone(), m as _)).collect();
    let matrix = transfer_matrix(&policy_refs, &censor_refs, &cfg.env, &test)?;

    let mut csv = String::from("source,target,asr\n");
    for (i, src) in matrix.sources.iter().enumerate() {
        for (j, tgt) in matrix.targets.iter().enumerate() {
            let _ = writeln!(csv, "{src},{tgt},{:.9}", matrix.asr[i][j]);
        }
    }
    write_text(&c.out_dir.join("transfer.csv"), &csv)?;
    for (i, src) in matrix.sources.iter().enumerate() {
        let row: Vec<String> = matrix.asr[i].iter().map(|a| format!("{a:.3}")).collect();
        println!("policy-{src}: {}", row.join(" "));
    }
    Ok(())
}

fn mask_sweep_cmd(c: &Common) -> Result<()> {
    let cfg = setup(c)?;
    let kind = cfg.eval.censor_kind()?;
    let censor = load_censor(c, kind)?;
    let encoder = load_encoder(c)?;
    let data = load_dataset(c, &cfg)?;
    let splits = split_dataset(&data, c.seed)?;
    let attack = splits.attack_train.filter_label(Label::Sensitive).flows;
    let probe = splits.validation.filter_label(Label::Sensitive).flows;
    let test = splits.test.filter_label(Label::Sensitive).flows;

    let mut acfg = cfg.agent.clone();
    acfg.seed = c.seed;
    println!(
        "mask sweep vs {kind}: rates {:?}, {} repeat(s), {} timesteps each",
        cfg.eval.mask_rates, cfg.eval.mask_repeats, acfg.total_timesteps
    );
    let points = mask_sweep(
        &censor,
        &cfg.env,
        &encoder,
        &acfg,
        &attack,
        &probe,
        &test,
        &cfg.eval.mask_rates,
        cfg.eval.mask_repeats,
    )?;
    let mut csv = String::from("rate,mean_asr,std_asr,queries\n");
    for p in &points {
        let _ = writeln!(csv, "{:.9},{:.9},{:.9},{}", p.rate, p.mean_asr, p.std_asr, p.queries);
        println!("p_mask={:.2}: asr {:.3} +/- {:.3} ({} queries)", p.rate, p.mean_asr, p.std_asr, p.queries);
    }
    write_text(&c.out_dir.join("mask_sweep.csv"), &csv)?;
    Ok(())
}

fn replay_cmd(c: &Common) -> Result<()> {
    let cfg = setup(c)?;
    let kind = cfg.eval.censor_kind()?;
    let path = c.out_dir.join(format!("profiles-{kind}.json"));
    if !path.exists() {
        return Err(Error::Input(format!("{} not found; run eval first", path.display())));
    }
    let store = ProfileStore::load(&path)?;
    let censor = load_censor(c, kind)?;
    let data = load_dataset(c, &cfg)?;
    let splits = split_dataset(&data, c.seed)?;
    let test = splits.test.filter_label(Label::Sensitive).flows;

    let report = replay_profiles(&store, &censor, &test)?;
    let csv = format!(
        "censor,asr,data_overhead,time_overhead,mean_connections,n_flows\n\
         {kind},{:.9},{:.9},{:.9},{:.9},{}\n",
        report.asr, report.data_overhead, report.time_overhead, report.mean_connections,
        report.n_flows
    );
    write_text(&c.out_dir.join(format!("replay_report-{kind}.csv")), &csv)?;
    println!(
        "replayed {} profiles over {} flows: asr={:.3} data-overhead={:.3} time-overhead={:.3} connections/flow={:.2}",
        store.profiles.len(),
        report.n_flows,
        report.asr,
        report.data_overhead,
        report.time_overhead,
        report.mean_connections
    );
    Ok(())
}

// --- report -----------------------------------------------------------------

/// Artifacts matching `prefix`-<tag>.csv in the output directory.
fn tagged_csvs(dir: &Path, prefix: &str) -> Vec<(String, PathBuf)> {
    let mut found = Vec::new();
    if let Ok(entries) = std::fs::read_dir(dir) {
        for entry in entries.flatten() {
            let name = entry.file_name().to_string_lossy().into_owned();
            if let Some(rest) = name.strip_prefix(prefix) {
                if let Some(tag) = rest.strip_prefix('-').and_then(|r| r.strip_suffix(".csv")) {
                    found.push((tag.to_string(), entry.path()));
                }
            }
        }
    }
    found.sort();
    found
}

fn report_cmd(c: &Common) -> Result<()> {
    setup(c)?;
    let out = &c.out_dir;
    let mut rendered = 0usize;

    let logs = tagged_csvs(out, "training_log");
    if !logs.is_empty() {
        let mut asr = Vec::new();
        let mut reward = Vec::new();
        for (tag, path) in &logs {
            let (h, rows) = read_csv(path)?;
            let t = col(&h, &rows, "timesteps", path)?;
            let a = col(&h, &rows, "probe_asr", path)?;
            let r = col(&h, &rows, "mean_reward", path)?;
            asr.push(Series::new(tag, t.iter().cloned().zip(a).collect()));
            reward.push(Series::new(tag, t.iter().cloned().zip(r).collect()));
        }
        save_svg(
            &out.join("training_asr.svg"),
            &line_plot("Attack success over training", "timesteps", "probe ASR", &asr)?,
        )?;
        save_svg(
            &out.join("training_reward.svg"),
            &line_plot("Episode reward over training", "timesteps", "mean reward", &reward)?,
        )?;
        rendered += 2;
    }

    for (tag, path) in tagged_csvs(out, "attack_flows") {
        let (h, rows) = read_csv(&path)?;
        let permitted = col(&h, &rows, "permitted", &path)?;
        let scores = col(&h, &rows, "score", &path)?;
        let mut ok: Vec<f64> = scores
            .iter()
            .zip(&permitted)
            .filter(|&(_, &p)| p == 1.0)
            .map(|(&s, _)| s)
            .collect();
        ok.sort_by(|a, b| a.partial_cmp(b).expect("scores are finite"));
        if !ok.is_empty() {
            let n = ok.len();
            let pts: Vec<(f64, f64)> =
                ok.into_iter().enumerate().map(|(i, s)| (s, (i + 1) as f64 / n as f64)).collect();
            save_svg(
                &out.join(format!("score_ecdf-{tag}.svg")),
                &ecdf_plot(
                    &format!("Censor score ECDF of successful flows ({tag})"),
                    "score",
                    &[Series::new(&tag, pts)],
                )?,
            )?;
            rendered += 1;
        }
        for action in ["truncations", "paddings", "delay_actions"] {
            let counts = col(&h, &rows, action, &path)?;
            let mut histo = std::collections::BTreeMap::new();
            for v in counts {
                *histo.entry(v as usize).or_insert(0usize) += 1;
            }
            let bars: Vec<(String, f64)> =
                histo.into_iter().map(|(k, v)| (k.to_string(), v as f64)).collect();
            save_svg(
                &out.join(format!("action_mix-{tag}-{action}.svg")),
                &histogram(
                    &format!("{action} per flow ({tag})"),
                    &format!("{action} in one episode"),
                    "flows",
                    &bars,
                )?,
            )?;
            rendered += 1;
        }
    }

    let transfer = out.join("transfer.csv");
    if transfer.exists() {
        let (h, rows) = read_csv(&transfer)?;
        let asr = col(&h, &rows, "asr", &transfer)?;
        let mut sources: Vec<String> = Vec::new();
        let mut targets: Vec<String> = Vec::new();
        for row in &rows {
            if !sources.contains(&row[0]) {
                sources.push(row[0].clone());
            }
            if !targets.contains(&row[1]) {
                targets.push(row[1].clone());
            }
        }
        let mut grid = vec![vec![0.0; targets.len()]; sources.len()];
        for (row, &v) in rows.iter().zip(&asr) {
            let i = sources.iter().position(|s| *s == row[0]).expect("collected above");
            let j = targets.iter().position(|t| *t == row[1]).expect("collected above");
            grid[i][j] = v;
        }
        save_svg(
            &out.join("transfer_heatmap.svg"),
            &heatmap("Transfer ASR (policy row vs censor column)", &sources, &targets, &grid)?,
        )?;
        rendered += 1;
    }

    let sweep = out.join("mask_sweep.csv");
    if sweep.exists() {
        let (h, rows) = read_csv(&sweep)?;
        let rate = col(&h, &rows, "rate", &sweep)?;
        let mean = col(&h, &rows, "mean_asr", &sweep)?;
        let pts: Vec<(f64, f64)> = rate.into_iter().zip(mean).collect();
        save_svg(
            &out.join("mask_sweep.svg"),
            &line_plot("ASR vs reward-mask rate", "p_mask", "ASR", &[Series::new("asr", pts)])?,
        )?;
        rendered += 1;
    }

    for (tag, path) in tagged_csvs(out, "feature_importance") {
        let (h, rows) = read_csv(&path)?;
        let imp = col(&h, &rows, "importance", &path)?;
        let bars: Vec<(String, f64)> =
            rows.iter().zip(&imp).take(12).map(|(r, &v)| (r[1].clone(), v)).collect();
        save_svg(
            &out.join(format!("feature_importance-{tag}.svg")),
            &histogram(&format!("Top feature importances ({tag})"), "feature", "importance", &bars)?,
        )?;
        rendered += 1;
    }

    let pretrain = out.join("encoder_pretrain.csv");
    if pretrain.exists() {
        let (h, rows) = read_csv(&pretrain)?;
        let idx = h.iter().position(|s| s == "loss").expect("fixed header");
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| !r[idx].is_empty())
            .map(|r| {
                Ok((
                    r[0].parse::<f64>().map_err(|e| Error::Parse {
                        path: pretrain.display().to_string(),
                        line: 0,
                        msg: e.to_string(),
                    })?,
                    r[idx].parse::<f64>().map_err(|e| Error::Parse {
                        path: pretrain.display().to_string(),
                        line: 0,
                        msg: e.to_string(),
                    })?,
                ))
            })
            .collect::<Result<_>>()?;
        save_svg(
            &out.join("encoder_loss.svg"),
            &line_plot(
                "Encoder pretraining loss",
                "epoch",
                "reconstruction loss",
                &[Series::new("loss", pts)],
            )?,
        )?;
        rendered += 1;
    }

    println!("rendered {rendered} plot(s) into {}", out.display());
    Ok(())
}
