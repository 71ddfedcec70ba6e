//! End-to-end steps shared by the command line and the acceptance suite:
//! synthesize, preprocess, train, evaluate and ablate.
//!
//! A preprocessed data directory holds `train.jsonl`, `valid.jsonl`,
//! `test.jsonl` (generic schema), `articles.jsonl`, `labels.json`,
//! `vocab.json` and `partition.json`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{
    build_vocab, generate_synthetic, load_articles, load_dataset, load_split, preprocess_with_remap, token_hash, write_articles,
    write_cases, Dataset, EmbeddingInit, LabelVocabularies, Schema, Split, SynthConfig, TextPipeline, Vocab,
};
use crate::error::{Error, Result};
use crate::eval::{build_report, MetricsReport, TrainFrequencies};
use crate::model::{encode_dataset, Ablation, Example, ModelState, Prediction, Task};
use crate::parallel::Parallelism;
use crate::prior_graph::build_partition;
use crate::training::{train, Checkpoint, EpochRecord, NoObserver, TrainConfig, TrainOptions};

/// Filtered, split corpus with the vocabulary built from its training part.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: Dataset,
    pub validation: Dataset,
    pub test: Dataset,
    pub vocab: Vocab,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    min_frequency: usize,
    hash: String,
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(v)?).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes `cases.jsonl` and `articles.jsonl` for a synthetic corpus.
pub fn synthesize(cfg: &SynthConfig, out: &Path) -> Result<Dataset> {
    cfg.validate()?;
    let ds = generate_synthetic(cfg);
    create_dir(out)?;
    write_cases(&out.join("cases.jsonl"), &ds)?;
    write_articles(&out.join("articles.jsonl"), &ds)?;
    write_json(&out.join("synth_config.json"), cfg)?;
    Ok(ds)
}

/// Filters and splits a raw corpus in memory.
pub fn prepare(raw: &Dataset, cfg: &TrainConfig) -> Result<PreparedData> {
    let (filtered, _) = preprocess_with_remap(raw, &cfg.preprocess_options())?;
    let (train, validation, test) = filtered.stratified_split(cfg.train_fraction, cfg.validation_fraction, cfg.seed);
    finish(train, validation, test, cfg)
}

fn finish(train: Dataset, validation: Dataset, test: Dataset, cfg: &TrainConfig) -> Result<PreparedData> {
    if train.articles.len() != train.num_laws() {
        return Err(Error::Config(format!(
            "{} law labels but {} articles; every law label needs its article text",
            train.num_laws(),
            train.articles.len()
        )));
    }
    let vocab = build_vocab(&train, cfg.min_frequency, cfg.embedding_dim, EmbeddingInit::Random { seed: cfg.seed })?;
    Ok(PreparedData {
        train,
        validation,
        test,
        vocab,
    })
}

/// Reads `cases.jsonl` (or pre-made `train/valid/test.jsonl`) and
/// `articles.jsonl` from `input`, filters, splits and writes the result to
/// `out`.
pub fn preprocess_dir(input: &Path, out: &Path, cfg: &TrainConfig, schema: Schema) -> Result<PreparedData> {
    let text = TextPipeline::default();
    let articles = input.join("articles.jsonl");
    let presplit = input.join("train.jsonl");
    let data = if presplit.exists() {
        let raw = load_dataset(&presplit, Some(&articles), schema, &text)?;
        let (train, remap) = preprocess_with_remap(&raw, &cfg.preprocess_options())?;
        let other = |name: &str, split: Split| -> Result<Dataset> {
            let path = input.join(name);
            if !path.exists() {
                return Ok(train.with_cases(Vec::new(), split));
            }
            Ok(remap.apply(&load_split(&path, &raw, split, schema, &text)?))
        };
        let validation = other("valid.jsonl", Split::Validation)?;
        let test = other("test.jsonl", Split::Test)?;
        finish(train, validation, test, cfg)?
    } else {
        let raw = load_dataset(&input.join("cases.jsonl"), Some(&articles), schema, &text)?;
        prepare(&raw, cfg)?
    };
    save_prepared(&data, cfg, out)?;
    Ok(data)
}

pub fn save_prepared(data: &PreparedData, cfg: &TrainConfig, out: &Path) -> Result<()> {
    create_dir(out)?;
    write_cases(&out.join("train.jsonl"), &data.train)?;
    write_cases(&out.join("valid.jsonl"), &data.validation)?;
    write_cases(&out.join("test.jsonl"), &data.test)?;
    write_articles(&out.join("articles.jsonl"), &data.train)?;
    write_json(&out.join("labels.json"), &data.train.labels)?;
    write_json(
        &out.join("vocab.json"),
        &VocabFile {
            tokens: data.vocab.tokens().to_vec(),
            min_frequency: data.vocab.min_frequency(),
            hash: data.vocab.hash(),
        },
    )?;
    let partition = build_partition(&data.train.articles, cfg.ablation.threshold(cfg.theta))?;
    write_json(&out.join("partition.json"), &partition.to_json())?;
    Ok(())
}

/// Loads a directory written by [`preprocess_dir`]. The vocabulary is
/// rebuilt from the training split with `cfg`'s embedding settings.
pub fn load_prepared(dir: &Path, cfg: &TrainConfig) -> Result<PreparedData> {
    let text = TextPipeline::default();
    let labels: LabelVocabularies = read_json(&dir.join("labels.json"))?;
    let base = base_dataset(dir, labels, &text)?;
    let split = |name: &str, s: Split| load_split(&dir.join(name), &base, s, Schema::Generic, &text);
    let data = finish(
        split("train.jsonl", Split::Train)?,
        split("valid.jsonl", Split::Validation)?,
        split("test.jsonl", Split::Test)?,
        cfg,
    )?;
    let stored = stored_vocab_hash(dir)?;
    if stored != data.vocab.hash() {
        return Err(Error::VocabMismatch {
            expected: stored,
            found: format!("{} (rebuilt with min_frequency={})", data.vocab.hash(), cfg.min_frequency),
        });
    }
    Ok(data)
}

fn base_dataset(dir: &Path, labels: LabelVocabularies, text: &TextPipeline) -> Result<Dataset> {
    let (articles, names) = load_articles(&dir.join("articles.jsonl"), text)?;
    if names.names() != labels.law.names() {
        return Err(Error::Config("articles.jsonl ids disagree with labels.json".into()));
    }
    Ok(Dataset {
        cases: Vec::new(),
        articles,
        labels,
        split: Split::Train,
    })
}

fn stored_vocab_hash(dir: &Path) -> Result<String> {
    let v: VocabFile = read_json(&dir.join("vocab.json"))?;
    if token_hash(&v.tokens) != v.hash {
        return Err(Error::Config("vocab.json hash does not match its tokens".into()));
    }
    Ok(v.hash)
}

/// Training outcome packaged with everything needed to reuse the model.
pub struct TrainedModel {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochRecord>,
}

pub fn train_model(
    data: &PreparedData,
    cfg: &TrainConfig,
    opts: &TrainOptions,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainedModel> {
    cfg.validate()?;
    let partition = build_partition(&data.train.articles, cfg.ablation.threshold(cfg.theta))?;
    let model_cfg = cfg.model_config(&data.vocab, &data.train);
    let state = ModelState::new(model_cfg, &data.vocab, &data.train.articles, partition)?;
    let train_ex = encode_dataset(&data.train, &data.vocab);
    let val_ex = encode_dataset(&data.validation, &data.vocab);
    let out = train(state, cfg, &train_ex, &val_ex, opts, &mut NoObserver, on_epoch)?;
    Ok(TrainedModel {
        checkpoint: Checkpoint {
            state: out.best,
            vocab: data.vocab.clone(),
            labels: data.train.labels.clone(),
            articles: data.train.articles.clone(),
            config: cfg.clone(),
            step: out.steps,
            best_metric: out.best_metric,
            best_epoch: out.best_epoch,
        },
        log: out.log,
    })
}

/// Scores `split` of `data` with a trained model.
pub fn evaluate_checkpoint(
    ck: &Checkpoint,
    data: &PreparedData,
    split: Split,
    mode: Parallelism,
) -> Result<(MetricsReport, Vec<Prediction>, Vec<Example>)> {
    if ck.vocab.hash() != data.vocab.hash() {
        return Err(Error::VocabMismatch {
            expected: ck.vocab.hash(),
            found: data.vocab.hash(),
        });
    }
    let ds = match split {
        Split::Train => &data.train,
        Split::Validation => &data.validation,
        Split::Test => &data.test,
    };
    if ds.cases.is_empty() {
        return Err(Error::Empty(format!("{split:?} split has no cases")));
    }
    let examples = encode_dataset(ds, &ck.vocab);
    let c = &ck.state.config;
    let freqs = TrainFrequencies::from_examples(&encode_dataset(&data.train, &ck.vocab), c.num_laws, c.num_charges);
    let facts: Vec<_> = examples.iter().map(|e| e.fact.clone()).collect();
    let preds = ck.state.predict(&facts, mode)?;
    let report = build_report(
        &preds,
        &examples,
        [c.num_laws, c.num_charges, c.num_penalties],
        &freqs,
        ck.config.tail_threshold,
    )?;
    Ok((report, preds, examples))
}

/// One JSON line per case with predicted and gold label names.
pub fn predictions_jsonl(labels: &LabelVocabularies, preds: &[Prediction], examples: &[Example]) -> String {
    let mut out = String::new();
    for (p, e) in preds.iter().zip(examples) {
        let name = |t: Task, i: usize| match t {
            Task::Law => labels.law.name(i).to_string(),
            Task::Charge => labels.charge.name(i).to_string(),
            Task::Penalty => labels.penalty.name(i).to_string(),
        };
        let mut rec = serde_json::Map::new();
        for t in Task::ALL {
            rec.insert(t.name().to_string(), json!(name(t, p.argmax(t))));
            rec.insert(format!("gold_{}", t.name()), json!(name(t, e.target(t))));
        }
        out.push_str(&serde_json::Value::Object(rec).to_string());
        out.push('\n');
    }
    out
}

/// Trains `variant` on the training split with `base`'s settings otherwise
/// and scores the test split.
pub fn run_ablation(
    data: &PreparedData,
    base: &TrainConfig,
    variant: Ablation,
    opts: &TrainOptions,
) -> Result<(MetricsReport, Checkpoint)> {
    let mut cfg = base.clone();
    cfg.ablation = variant;
    let trained = train_model(data, &cfg, opts, &mut |_| {})?;
    let (report, _, _) = evaluate_checkpoint(&trained.checkpoint, data, Split::Test, opts.mode)?;
    Ok((report, trained.checkpoint))
}
