use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dladan::corpus::{Schema, Split, SynthConfig};
use dladan::eval::ablation_csv;
use dladan::model::Ablation;
use dladan::parallel::{init_threads_from_env, Parallelism};
use dladan::pipeline::{
    evaluate_checkpoint, load_prepared, predictions_jsonl, preprocess_dir, run_ablation, synthesize, train_model,
};
use dladan::training::{Checkpoint, TrainConfig, TrainOptions};

#[derive(Parser)]
#[command(name = "dladan", version, about = "Legal judgment prediction: synthesize, preprocess, train, eval, ablate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run batches on one thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus (cases.jsonl, articles.jsonl).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Filter and split a corpus directory.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Record layout: generic or cail.
        #[arg(long, default_value = "generic")]
        schema: String,
        #[command(flatten)]
        common: Common,
    },
    /// Train on a preprocessed directory; writes checkpoint/ and train_log.jsonl.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score a checkpoint; writes metrics.json and predictions.jsonl.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// test or valid.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        sequential: bool,
    },
    /// Train and score every ablation variant; writes one metrics file per
    /// variant and ablation.csv.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated subset of variants.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<Ablation>,
        #[command(flatten)]
        common: Common,
    },
}

fn mode(sequential: bool) -> Parallelism {
    if sequential {
        Parallelism::Sequential
    } else {
        Parallelism::Parallel
    }
}

fn train_config(c: &Common) -> Result<TrainConfig> {
    let mut cfg = match &c.config {
        Some(p) => TrainConfig::from_file(p)?,
        None => TrainConfig::default(),
    };
    cfg.apply_overrides(&c.overrides)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn synth_config(c: &Common) -> Result<SynthConfig> {
    let mut table = match &c.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            text.parse::<toml::Table>()?
        }
        None => toml::Table::try_from(SynthConfig::default())?,
    };
    let known = toml::Table::try_from(SynthConfig::default())?;
    for o in &c.overrides {
        let Some((k, v)) = o.split_once('=') else {
            bail!("override `{o}` is not KEY=VALUE");
        };
        let (k, v) = (k.trim(), v.trim());
        let Some(current) = known.get(k) else {
            bail!(
                "unknown synth key `{k}` (known: {})",
                known.keys().cloned().collect::<Vec<_>>().join(", ")
            );
        };
        let parsed: toml::Value = format!("v = {v}").parse::<toml::Table>()?.remove("v").unwrap();
        let parsed = match (current, parsed) {
            (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (_, p) => p,
        };
        table.insert(k.to_string(), parsed);
    }
    let mut cfg: SynthConfig = table.try_into()?;
    if let Some(s) = c.seed {
        cfg.rng_seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, common } => {
            let cfg = synth_config(&common)?;
            let ds = synthesize(&cfg, &out)?;
            log::info!("wrote {} cases and {} articles", ds.cases.len(), ds.articles.len());
        }
        Command::Preprocess {
            input,
            out,
            schema,
            common,
        } => {
            let cfg = train_config(&common)?;
            let schema: Schema = schema.parse()?;
            let data = preprocess_dir(&input, &out, &cfg, schema)?;
            log::info!(
                "{} train, {} valid, {} test cases; {} laws, {} charges",
                data.train.cases.len(),
                data.validation.cases.len(),
                data.test.cases.len(),
                data.train.num_laws(),
                data.train.num_charges()
            );
        }
        Command::Train { data, out, common } => {
            let cfg = train_config(&common)?;
            let prepared = load_prepared(&data, &cfg)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let log_path = out.join("train_log.jsonl");
            let mut log_file =
                fs::File::create(&log_path).with_context(|| format!("creating {}", log_path.display()))?;
            let mut log_err = None;
            let opts = TrainOptions {
                mode: mode(common.sequential),
                ..Default::default()
            };
            let trained = train_model(&prepared, &cfg, &opts, &mut |r| {
                let line = serde_json::to_string(r).expect("log record serializes");
                if let Err(e) = writeln!(log_file, "{line}") {
                    log_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = log_err {
                return Err(e).with_context(|| format!("writing {}", log_path.display()));
            }
            trained.checkpoint.save(&out.join("checkpoint"))?;
        }
        Command::Eval {
            checkpoint,
            data,
            out,
            split,
            sequential,
        } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let prepared = load_prepared(&data, &ck.config)?;
            let split = match split.as_str() {
                "test" => Split::Test,
                "valid" | "validation" => Split::Validation,
                "train" => Split::Train,
                other => bail!("unknown split `{other}` (expected test, valid or train)"),
            };
            let (report, preds, examples) = evaluate_checkpoint(&ck, &prepared, split, mode(sequential))?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            write(&out.join("metrics.json"), &report.to_json()?)?;
            write(&out.join("predictions.jsonl"), &predictions_jsonl(&ck.labels, &preds, &examples))?;
        }
        Command::Ablate {
            data,
            out,
            variants,
            common,
        } => {
            let cfg = train_config(&common)?;
            let prepared = load_prepared(&data, &cfg)?;
            let variants = if variants.is_empty() {
                Ablation::ALL.to_vec()
            } else {
                variants
            };
            let opts = TrainOptions {
                mode: mode(common.sequential),
                ..Default::default()
            };
            let mut rows = Vec::new();
            for v in variants {
                log::info!("training variant {v}");
                let (report, _) = run_ablation(&prepared, &cfg, v, &opts)?;
                let dir = out.join(v.name());
                fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                write(&dir.join("metrics.json"), &report.to_json()?)?;
                rows.push((v, report));
            }
            write(&out.join("ablation.csv"), &ablation_csv(&rows))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    init_threads_from_env();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("{}", serde_json::json!({ "error": msg }));
            ExitCode::from(1)
        }
    }
}
