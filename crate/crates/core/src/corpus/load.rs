//! JSON Lines readers and writers for case and article files.
//!
//! Generic case record:
//! `{"fact": str, "law": str|int|[..], "charge": str|int|[..],
//!   "penalty": {"months": int} | "life" | "death" | "none"}`
//!
//! CAIL record: `{"fact": str, "meta": {"relevant_articles": [..],
//! "accusation": [..], "term_of_imprisonment": {"death_penalty": bool,
//! "life_imprisonment": bool, "imprisonment": int}}}`
//!
//! Article record: `{"id": str|int, "text": str}`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde_json::{json, Value};

use super::penalty::{PenaltyBucketTable, RawPenalty};
use super::text::TextPipeline;
use super::{Dataset, LabelVocab, LabelVocabularies, LawArticle, LawCase, Split};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schema {
    Cail,
    Generic,
}

impl std::str::FromStr for Schema {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cail" => Ok(Schema::Cail),
            "generic" => Ok(Schema::Generic),
            other => Err(Error::Config(format!("unknown schema `{other}`"))),
        }
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

fn label_strings(v: Option<&Value>, line: usize, field: &str) -> Result<Vec<String>> {
    let v = v.ok_or_else(|| Error::schema(line, field, "missing"))?;
    let one = |x: &Value| -> Result<String> {
        match x {
            Value::String(s) => Ok(s.clone()),
            Value::Number(n) if n.is_i64() || n.is_u64() => Ok(n.to_string()),
            _ => Err(Error::schema(line, field, "expected string or integer label")),
        }
    };
    match v {
        Value::Array(items) if !items.is_empty() => items.iter().map(one).collect(),
        Value::Array(_) => Err(Error::schema(line, field, "empty label list")),
        x => Ok(vec![one(x)?]),
    }
}

fn generic_penalty(v: Option<&Value>, line: usize) -> Result<RawPenalty> {
    let v = v.ok_or_else(|| Error::schema(line, "penalty", "missing"))?;
    match v {
        Value::String(s) => match s.as_str() {
            "life" => Ok(RawPenalty::Life),
            "death" => Ok(RawPenalty::Death),
            "none" => Ok(RawPenalty::None),
            other => Err(Error::schema(
                line,
                "penalty",
                format!("unknown penalty `{other}`"),
            )),
        },
        Value::Object(o) => {
            let m = o
                .get("months")
                .ok_or_else(|| Error::schema(line, "penalty.months", "missing"))?;
            let m = m
                .as_i64()
                .ok_or_else(|| Error::schema(line, "penalty.months", "expected integer"))?;
            if m < 0 {
                return Err(Error::schema(line, "penalty.months", format!("negative value {m}")));
            }
            u32::try_from(m)
                .map(RawPenalty::Months)
                .map_err(|_| Error::schema(line, "penalty.months", "out of range"))
        }
        _ => Err(Error::schema(line, "penalty", "expected object or string")),
    }
}

fn cail_penalty(meta: &Value, line: usize) -> Result<RawPenalty> {
    let t = meta
        .get("term_of_imprisonment")
        .ok_or_else(|| Error::schema(line, "meta.term_of_imprisonment", "missing"))?;
    let flag = |k: &str| t.get(k).and_then(Value::as_bool).unwrap_or(false);
    if flag("death_penalty") {
        return Ok(RawPenalty::Death);
    }
    if flag("life_imprisonment") {
        return Ok(RawPenalty::Life);
    }
    let m = t
        .get("imprisonment")
        .and_then(Value::as_i64)
        .ok_or_else(|| Error::schema(line, "meta.term_of_imprisonment.imprisonment", "expected integer"))?;
    if m < 0 {
        return Err(Error::schema(
            line,
            "meta.term_of_imprisonment.imprisonment",
            format!("negative value {m}"),
        ));
    }
    Ok(if m == 0 {
        RawPenalty::None
    } else {
        RawPenalty::Months(m as u32)
    })
}

fn resolve(
    vocab: &mut LabelVocab,
    name: String,
    closed: bool,
    line: usize,
    kind: &'static str,
) -> Result<usize> {
    if closed {
        vocab.get(&name).ok_or_else(|| Error::UnknownLabel {
            line,
            kind,
            label: name,
            known: vocab.names().join(", "),
        })
    } else {
        Ok(vocab.insert(name))
    }
}

/// Loads an article file. Article `i` in file order becomes law label `i`.
pub fn load_articles(path: &Path, text: &TextPipeline) -> Result<(Vec<LawArticle>, LabelVocab)> {
    let mut names = LabelVocab::default();
    let mut articles = Vec::new();
    for (line, raw) in read_lines(path)? {
        let v: Value = serde_json::from_str(&raw)
            .map_err(|e| Error::schema(line, "<record>", e.to_string()))?;
        let id = label_strings(v.get("id"), line, "id")?;
        if id.len() != 1 {
            return Err(Error::schema(line, "id", "expected a single id"));
        }
        let body = v
            .get("text")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::schema(line, "text", "missing or not a string"))?;
        let sentences = text.process(body);
        if sentences.is_empty() {
            return Err(Error::schema(line, "text", "article text is empty"));
        }
        let id = id.into_iter().next().unwrap();
        if names.get(&id).is_some() {
            return Err(Error::schema(line, "id", format!("duplicate article id `{id}`")));
        }
        let idx = names.insert(id);
        articles.push(LawArticle {
            article_id: idx,
            text: sentences,
        });
    }
    Ok((articles, names))
}

/// Loads raw (unfiltered) cases. When `articles` is given, law labels must
/// name article ids from that file.
pub fn load_dataset(
    cases: &Path,
    articles: Option<&Path>,
    schema: Schema,
    text: &TextPipeline,
) -> Result<Dataset> {
    let (arts, law_vocab) = match articles {
        Some(p) => load_articles(p, text)?,
        None => (Vec::new(), LabelVocab::default()),
    };
    let mut labels = LabelVocabularies {
        law: law_vocab,
        charge: LabelVocab::default(),
        penalty: LabelVocabularies::penalty_names(),
    };
    let out = read_cases(cases, &mut labels, articles.is_some(), false, schema, text)?;
    Ok(Dataset {
        cases: out,
        articles: arts,
        labels,
        split: Split::Train,
    })
}

/// Loads another split against the label vocabularies and articles of
/// `base`, so label ids agree across splits. Labels unknown to `base` are
/// an error.
pub fn load_split(cases: &Path, base: &Dataset, split: Split, schema: Schema, text: &TextPipeline) -> Result<Dataset> {
    let mut labels = base.labels.clone();
    let out = read_cases(cases, &mut labels, true, true, schema, text)?;
    Ok(Dataset {
        cases: out,
        articles: base.articles.clone(),
        labels,
        split,
    })
}

fn read_cases(
    path: &Path,
    labels: &mut LabelVocabularies,
    closed_laws: bool,
    closed_charges: bool,
    schema: Schema,
    text: &TextPipeline,
) -> Result<Vec<LawCase>> {
    let buckets = PenaltyBucketTable::default();
    let mut out = Vec::new();
    for (line, raw) in read_lines(path)? {
        let v: Value = serde_json::from_str(&raw)
            .map_err(|e| Error::schema(line, "<record>", e.to_string()))?;
        let fact = v
            .get("fact")
            .ok_or_else(|| Error::schema(line, "fact", "missing"))?
            .as_str()
            .ok_or_else(|| Error::schema(line, "fact", "expected string"))?;
        let (laws, charges, penalty) = match schema {
            Schema::Generic => (
                label_strings(v.get("law"), line, "law")?,
                label_strings(v.get("charge"), line, "charge")?,
                generic_penalty(v.get("penalty"), line)?,
            ),
            Schema::Cail => {
                let meta = v
                    .get("meta")
                    .ok_or_else(|| Error::schema(line, "meta", "missing"))?;
                (
                    label_strings(meta.get("relevant_articles"), line, "meta.relevant_articles")?,
                    label_strings(meta.get("accusation"), line, "meta.accusation")?,
                    cail_penalty(meta, line)?,
                )
            }
        };
        let multi_label = laws.len() > 1 || charges.len() > 1;
        let mut law_ids = Vec::with_capacity(laws.len());
        for l in laws {
            law_ids.push(resolve(&mut labels.law, l, closed_laws, line, "law")?);
        }
        let mut charge_ids = Vec::with_capacity(charges.len());
        for c in charges {
            charge_ids.push(resolve(&mut labels.charge, c, closed_charges, line, "charge")?);
        }
        let sentences = text.process(fact);
        if sentences.is_empty() {
            return Err(Error::schema(line, "fact", "fact text has no tokens"));
        }
        out.push(LawCase {
            fact: sentences,
            law_label: law_ids[0],
            charge_label: charge_ids[0],
            penalty_label: buckets.bucket(penalty),
            raw_penalty: penalty,
            multi_label,
        });
    }
    Ok(out)
}

fn join_sentences(sentences: &[Vec<String>]) -> String {
    sentences
        .iter()
        .map(|s| format!("{} .", s.join(" ")))
        .collect::<Vec<_>>()
        .join(" ")
}

fn penalty_json(p: RawPenalty) -> Value {
    match p {
        RawPenalty::Months(m) => json!({ "months": m }),
        RawPenalty::Life => json!("life"),
        RawPenalty::Death => json!("death"),
        RawPenalty::None => json!("none"),
    }
}

/// Writes cases in the generic schema with label names as strings.
pub fn write_cases(path: &Path, ds: &Dataset) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for c in &ds.cases {
        let rec = json!({
            "fact": join_sentences(&c.fact),
            "law": ds.labels.law.name(c.law_label),
            "charge": ds.labels.charge.name(c.charge_label),
            "penalty": penalty_json(c.raw_penalty),
        });
        writeln!(w, "{rec}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_articles(path: &Path, ds: &Dataset) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for a in &ds.articles {
        let rec = json!({
            "id": ds.labels.law.name(a.article_id),
            "text": join_sentences(&a.text),
        });
        writeln!(w, "{rec}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file_with(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    const ARTICLES: &[&str] = &[
        r#"{"id": "264", "text": "theft of property ."}"#,
        r#"{"id": 266, "text": "fraud by deception ."}"#,
    ];

    #[test]
    fn split_reuses_base_labels() {
        let arts = file_with(ARTICLES);
        let train = file_with(&[
            r#"{"fact": "a b c", "law": "264", "charge": "theft", "penalty": "none"}"#,
            r#"{"fact": "d e f", "law": "266", "charge": "fraud", "penalty": "none"}"#,
        ]);
        let test = file_with(&[
            r#"{"fact": "x y", "law": "266", "charge": "fraud", "penalty": "none"}"#,
            r#"{"fact": "x z", "law": "264", "charge": "theft", "penalty": "none"}"#,
        ]);
        let text = TextPipeline::default();
        let base = load_dataset(train.path(), Some(arts.path()), Schema::Generic, &text).unwrap();
        let t = load_split(test.path(), &base, Split::Test, Schema::Generic, &text).unwrap();
        assert_eq!(t.labels, base.labels);
        assert_eq!((t.cases[0].law_label, t.cases[0].charge_label), (1, 1));
        assert_eq!(t.split, Split::Test);
        let bad = file_with(&[r#"{"fact": "x", "law": "264", "charge": "arson", "penalty": "none"}"#]);
        match load_split(bad.path(), &base, Split::Test, Schema::Generic, &text) {
            Err(Error::UnknownLabel { label, known, .. }) => {
                assert_eq!(label, "arson");
                assert!(known.contains("theft"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn loads_three_generic_records() {
        let cases = file_with(&[
            r#"{"fact": "he took the bike . it was red", "law": "264", "charge": "theft", "penalty": {"months": 8}}"#,
            r#"{"fact": "she lied to obtain money", "law": 266, "charge": "fraud", "penalty": "life"}"#,
            r#"{"fact": "he took a phone", "law": ["264"], "charge": "theft", "penalty": "none"}"#,
        ]);
        let arts = file_with(ARTICLES);
        let ds = load_dataset(cases.path(), Some(arts.path()), Schema::Generic, &TextPipeline::default())
            .unwrap();
        assert_eq!(ds.cases.len(), 3);
        assert_eq!(ds.articles.len(), 2);
        assert_eq!(ds.cases[0].fact.len(), 2);
        assert_eq!(ds.cases[0].penalty_label, 8);
        assert_eq!(ds.cases[1].law_label, 1);
        assert_eq!(ds.cases[1].raw_penalty, RawPenalty::Life);
        assert_eq!(ds.cases[2].charge_label, 0);
        assert!(!ds.cases[2].multi_label);
    }

    #[test]
    fn missing_fact_names_line_and_field() {
        let cases = file_with(&[
            r#"{"fact": "ok", "law": "a", "charge": "b", "penalty": "none"}"#,
            r#"{"law": "a", "charge": "b", "penalty": "none"}"#,
        ]);
        let err = load_dataset(cases.path(), None, Schema::Generic, &TextPipeline::default())
            .unwrap_err();
        match err {
            Error::Schema { line, field, .. } => {
                assert_eq!(line, 2);
                assert_eq!(field, "fact");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn negative_months_rejected() {
        let cases = file_with(&[
            r#"{"fact": "x", "law": "a", "charge": "b", "penalty": {"months": -1}}"#,
        ]);
        let err = load_dataset(cases.path(), None, Schema::Generic, &TextPipeline::default())
            .unwrap_err();
        assert!(matches!(err, Error::Schema { ref field, .. } if field == "penalty.months"));
    }

    #[test]
    fn unknown_law_lists_known_labels() {
        let cases = file_with(&[
            r#"{"fact": "x", "law": "999", "charge": "b", "penalty": "none"}"#,
        ]);
        let arts = file_with(ARTICLES);
        let err = load_dataset(cases.path(), Some(arts.path()), Schema::Generic, &TextPipeline::default())
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("999") && msg.contains("264, 266"), "{msg}");
    }

    #[test]
    fn cail_records_and_multi_labels() {
        let cases = file_with(&[
            r#"{"fact": "a b c", "meta": {"relevant_articles": [264], "accusation": ["theft"], "term_of_imprisonment": {"death_penalty": false, "life_imprisonment": false, "imprisonment": 12}}}"#,
            r#"{"fact": "a b c", "meta": {"relevant_articles": [264, 266], "accusation": ["theft"], "term_of_imprisonment": {"death_penalty": true, "life_imprisonment": false, "imprisonment": 0}}}"#,
        ]);
        let ds = load_dataset(cases.path(), None, Schema::Cail, &TextPipeline::default()).unwrap();
        assert_eq!(ds.cases[0].raw_penalty, RawPenalty::Months(12));
        assert_eq!(ds.cases[1].raw_penalty, RawPenalty::Death);
        assert!(ds.cases[1].multi_label);
    }

    #[test]
    fn write_then_load_preserves_cases() {
        let ds = super::super::generate_synthetic(&super::super::SynthConfig {
            num_communities: 2,
            articles_per_community: 2,
            cases_per_head_article: 10,
            ..Default::default()
        });
        let dir = tempfile::tempdir().unwrap();
        let cp = dir.path().join("cases.jsonl");
        let ap = dir.path().join("articles.jsonl");
        write_cases(&cp, &ds).unwrap();
        write_articles(&ap, &ds).unwrap();
        let back = load_dataset(&cp, Some(&ap), Schema::Generic, &TextPipeline::default()).unwrap();
        assert_eq!(back.cases, ds.cases);
        assert_eq!(back.articles, ds.articles);
        assert_eq!(back.labels.law, ds.labels.law);
    }
}
