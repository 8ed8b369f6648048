//! `polyfair`: generate corpora, train, evaluate and compare fairness reports.
//!
//! Exit status is 0 on success, 1 for usage errors (bad flags, unknown
//! attributes, invalid configurations) and 2 for data errors (missing or
//! malformed files, failures while computing).

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use polyfair_core::encoder::EncoderMode;
use polyfair_core::io::{self, ReportFile};
use polyfair_core::metrics::{full_report, strategy_destructiveness};
use polyfair_core::synth::{generate, CorpusSpec};
use polyfair_core::trainer::{random_search, train, Sampler, SearchConfig};
use polyfair_core::{AttributeSpec, Dataset, LossWeights, SdMode, Split, TrainConfig, TrainMode};

#[derive(Debug, Parser)]
#[command(name = "polyfair", version, about = "Fairness metrics and contrastive debiasing for multilingual text classifiers")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus into a data directory.
    Gen(GenArgs),
    /// Train a model and write a run directory.
    Train(TrainArgs),
    /// Compute a fairness report from a predictions file.
    Eval(EvalArgs),
    /// Strategy destructiveness between baseline and debiased reports.
    Compare(CompareArgs),
    /// Random search over loss weights and temperature.
    Search(SearchArgs),
}

#[derive(Debug, clap::Args)]
struct GenArgs {
    /// Corpus specification (JSON); the built-in default when omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Merge,
    Individual,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SamplerArg {
    Stratified,
    Uniform,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EncoderArg {
    Projected,
    Identity,
}

/// Options shared by `train` and `search`.
#[derive(Debug, clap::Args)]
struct BaseArgs {
    /// Data directory written by `gen` (meta.json plus split files).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "merge")]
    mode: ModeArg,
    /// Sensitive attribute used for debiasing and reports.
    #[arg(long, default_value = "gender")]
    attr: String,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value_t = 1e-2)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Positive class for FPR-based metrics.
    #[arg(long, default_value_t = 1)]
    positive: usize,
    #[arg(long, value_enum, default_value = "stratified")]
    sampler: SamplerArg,
    #[arg(long, default_value_t = 32)]
    embed_dim: usize,
    #[arg(long, default_value_t = 32)]
    hidden_dim: usize,
    #[arg(long, value_enum, default_value = "projected")]
    encoder: EncoderArg,
}

#[derive(Debug, clap::Args)]
struct TrainArgs {
    #[command(flatten)]
    base: BaseArgs,
    /// Language-fusion weight.
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    /// Text-debiasing weight.
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    /// Separate temperature for the debiasing loss (defaults to --tau).
    #[arg(long)]
    tau_td: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, clap::Args)]
struct EvalArgs {
    /// Predictions file (JSON lines).
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    attr: String,
    #[arg(long, default_value_t = 1)]
    positive: usize,
    /// Attribute values to report on; inferred from the records when omitted.
    #[arg(long, value_delimiter = ',')]
    values: Vec<String>,
    /// Languages to report on; inferred from the records when omitted.
    #[arg(long, value_delimiter = ',')]
    languages: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, clap::Args)]
struct CompareArgs {
    /// Reports of the baseline model, one per attribute.
    #[arg(long, num_args = 1.., required = true)]
    baseline: Vec<PathBuf>,
    /// Reports of the debiased model, one per attribute.
    #[arg(long, num_args = 1.., required = true)]
    debiased: Vec<PathBuf>,
    /// Attributes to average over (the ones not being debiased).
    #[arg(long, value_delimiter = ',', required = true)]
    attrs: Vec<String>,
    /// Use min(delta, 0) instead of max(delta, 0).
    #[arg(long)]
    sd_literal: bool,
    /// Also write the result as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, clap::Args)]
struct SearchArgs {
    #[command(flatten)]
    base: BaseArgs,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    /// Largest allowed macro-F drop against the unweighted baseline.
    #[arg(long, default_value_t = 0.05)]
    macro_f_tolerance: f64,
    /// Write the search outcome as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

type Outcome = std::result::Result<(), Failure>;

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn data(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Data(e.into())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let result = match cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Compare(a) => cmd_compare(a),
        Command::Search(a) => cmd_search(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn cmd_gen(a: GenArgs) -> Outcome {
    let spec: CorpusSpec = match &a.spec {
        Some(p) => io::read_json(p).with_context(|| format!("reading {}", p.display())).map_err(data)?,
        None => CorpusSpec::default(),
    };
    spec.validate().map_err(usage)?;
    let dataset = generate(&spec, a.seed).map_err(data)?;
    io::write_data_dir(&a.out, &dataset).map_err(data)?;
    let config = json!({ "command": "gen", "seed": a.seed, "spec": spec });
    io::write_json(&a.out.join("gen.json"), &config).map_err(data)?;
    println!("{} samples in {} languages -> {}", dataset.len(), dataset.languages.len(), a.out.display());
    Ok(())
}

fn base_config(b: &BaseArgs, weights: LossWeights) -> TrainConfig {
    TrainConfig {
        epochs: b.epochs,
        batch_size: b.batch_size,
        learning_rate: b.lr,
        weights,
        mode: match b.mode {
            ModeArg::Merge => TrainMode::Merge,
            ModeArg::Individual => TrainMode::Individual,
        },
        attribute: b.attr.clone(),
        seed: b.seed,
        sampler: match b.sampler {
            SamplerArg::Stratified => Sampler::Stratified,
            SamplerArg::Uniform => Sampler::Uniform,
        },
        positive: b.positive,
        embed_dim: b.embed_dim,
        hidden_dim: b.hidden_dim,
        encoder_mode: match b.encoder {
            EncoderArg::Projected => EncoderMode::Projected,
            EncoderArg::Identity => EncoderMode::Identity,
        },
    }
}

/// Loads the data directory and checks the config against it.
fn load_for_training(config: &TrainConfig, dir: &Path) -> std::result::Result<Dataset, Failure> {
    config.validate().map_err(usage)?;
    let dataset = io::read_data_dir(dir)
        .with_context(|| format!("reading data directory {}", dir.display()))
        .map_err(data)?;
    if dataset.attribute(&config.attribute).is_none() {
        let known: Vec<&str> = dataset.attribute_specs.iter().map(|a| a.name.as_str()).collect();
        return Err(usage(anyhow!("unknown attribute {:?} (dataset has {known:?})", config.attribute)));
    }
    if config.positive >= dataset.num_classes {
        return Err(usage(anyhow!(
            "positive class {} out of range for {} classes",
            config.positive,
            dataset.num_classes
        )));
    }
    Ok(dataset)
}

fn cmd_train(a: TrainArgs) -> Outcome {
    let mut weights = LossWeights::new(a.alpha, a.beta, a.tau).map_err(usage)?;
    if let Some(t) = a.tau_td {
        weights = weights.with_tau_td(t).map_err(usage)?;
    }
    let config = base_config(&a.base, weights);
    let dataset = load_for_training(&config, &a.base.data)?;
    let outcome = train(&dataset, &config).map_err(data)?;
    io::write_run(&a.out, &config, &outcome, &dataset).map_err(data)?;
    for (split, r) in &outcome.reports {
        println!(
            "{split}: macro_f {:.4}  med_avg {}  mued {}  mepd {:.4}",
            r.overall.macro_f,
            fmt_opt(r.aggregates.med_avg),
            fmt_opt(r.aggregates.mued),
            r.aggregates.mepd
        );
    }
    println!("run written to {}", a.out.display());
    Ok(())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "undefined".into(), |v| format!("{v:.4}"))
}

fn cmd_eval(a: EvalArgs) -> Outcome {
    let records = io::read_predictions(&a.pred)
        .with_context(|| format!("reading {}", a.pred.display()))
        .map_err(data)?;
    if records.is_empty() {
        return Err(data(anyhow!("{}: no prediction records", a.pred.display())));
    }
    let values: Vec<String> = if a.values.is_empty() {
        let seen: BTreeSet<&String> = records.iter().filter_map(|r| r.attrs.get(&a.attr)).collect();
        seen.into_iter().cloned().collect()
    } else {
        a.values.clone()
    };
    if values.is_empty() {
        return Err(usage(anyhow!("no record carries attribute {:?}", a.attr)));
    }
    let spec = AttributeSpec {
        name: a.attr.clone(),
        values,
    };
    let report = full_report(&records, &spec, a.positive, &a.languages).map_err(data)?;
    let config = json!({
        "command": "eval",
        "pred": a.pred.display().to_string(),
        "attr": a.attr,
        "positive": a.positive,
        "values": spec.values,
        "languages": a.languages,
    });
    let file = ReportFile::new(&report, config).map_err(data)?;
    file.write(&a.out).map_err(data)?;
    let r = &file.report;
    for (lang, m) in &r.per_language {
        println!("{lang}: macro_f {:.4}  med {}", m.macro_f, fmt_opt(m.med));
    }
    println!(
        "med_avg {}  mued {}  mepd {:.4}  macro_f {:.4}",
        fmt_opt(r.aggregates.med_avg),
        fmt_opt(r.aggregates.mued),
        r.aggregates.mepd,
        r.overall.macro_f
    );
    for n in &r.notices {
        log::warn!("{n}");
    }
    Ok(())
}

/// Average MED per attribute from a set of report files.
fn med_by_attribute(paths: &[PathBuf], wanted: &[String]) -> std::result::Result<BTreeMap<String, f64>, Failure> {
    let mut found: BTreeMap<String, Option<f64>> = BTreeMap::new();
    for p in paths {
        let file = ReportFile::read(p)
            .with_context(|| format!("reading {}", p.display()))
            .map_err(data)?;
        let attr = file.report.attribute.clone();
        if found.insert(attr.clone(), file.report.aggregates.med_avg).is_some() {
            return Err(usage(anyhow!("two reports for attribute {attr:?}")));
        }
    }
    let mut out = BTreeMap::new();
    for name in wanted {
        match found.get(name) {
            None => return Err(usage(anyhow!("no report for attribute {name:?}"))),
            Some(None) => return Err(data(anyhow!("report for {name:?} has no defined med_avg"))),
            Some(Some(v)) => {
                out.insert(name.clone(), *v);
            }
        }
    }
    Ok(out)
}

fn cmd_compare(a: CompareArgs) -> Outcome {
    let mut attrs = a.attrs.clone();
    attrs.sort();
    attrs.dedup();
    let base = med_by_attribute(&a.baseline, &attrs)?;
    let deb = med_by_attribute(&a.debiased, &attrs)?;
    let mode = if a.sd_literal { SdMode::Literal } else { SdMode::Clip };
    let sd = strategy_destructiveness(&base, &deb, mode).map_err(data)?;
    let mut per = serde_json::Map::new();
    for name in &attrs {
        println!(
            "{name}: baseline {:.4}  debiased {:.4}  delta {:+.4}",
            base[name],
            deb[name],
            deb[name] - base[name]
        );
        per.insert(
            name.clone(),
            json!({ "baseline": base[name], "debiased": deb[name], "delta": deb[name] - base[name] }),
        );
    }
    let mode_name = if a.sd_literal { "literal" } else { "clip" };
    println!("sd ({mode_name}) {sd:.4}");
    if let Some(out) = &a.out {
        let paths = |v: &[PathBuf]| v.iter().map(|p| p.display().to_string()).collect::<Vec<_>>();
        let doc = json!({
            "command": "compare",
            "baseline": paths(&a.baseline),
            "debiased": paths(&a.debiased),
            "mode": mode,
            "attributes": per,
            "sd": io::round_sig6(sd),
        });
        io::write_json(out, &doc).map_err(data)?;
    }
    Ok(())
}

fn cmd_search(a: SearchArgs) -> Outcome {
    let base = base_config(&a.base, LossWeights::default());
    let dataset = load_for_training(&base, &a.base.data)?;
    if a.trials < 1 {
        return Err(usage(anyhow!("--trials must be >= 1")));
    }
    let search = SearchConfig {
        trials: a.trials,
        seed: a.base.seed,
        macro_f_tolerance: a.macro_f_tolerance,
        ..SearchConfig::default()
    };
    if dataset.samples.iter().all(|s| s.split != Split::Dev) {
        return Err(data(anyhow!("search scores on the dev split, which is empty")));
    }
    let outcome = random_search(&dataset, &base, &search).map_err(data)?;
    println!(
        "baseline: macro_f {:.4}  med_avg {}",
        outcome.baseline_macro_f,
        fmt_opt(outcome.baseline_med_avg)
    );
    println!("trial  alpha   beta    tau     med_avg  macro_f  feasible");
    for t in &outcome.trials {
        println!(
            "{:>5}  {:.4}  {:.4}  {:.4}  {:>7}  {:.4}   {}",
            t.trial,
            t.weights.alpha,
            t.weights.beta,
            t.weights.tau,
            fmt_opt(t.med_avg),
            t.macro_f,
            if t.feasible { "yes" } else { "no" }
        );
    }
    let w = outcome.best.weights;
    println!(
        "best: trial {}  alpha {:.4}  beta {:.4}  tau {:.4}{}",
        outcome.best_trial,
        w.alpha,
        w.beta,
        w.tau,
        if outcome.fell_back { "  (no trial met the macro-F floor)" } else { "" }
    );
    if let Some(out) = &a.out {
        let doc = json!({ "command": "search", "search": search, "outcome": outcome });
        io::write_json(out, &doc).map_err(data)?;
    }
    Ok(())
}
