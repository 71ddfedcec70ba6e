//! Case filtering and dense label re-indexing.

use super::penalty::PenaltyBucketTable;
use super::text::meaningful_count;
use super::{Dataset, LabelVocab, LabelVocabularies, LawArticle, LawCase};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct PreprocessOptions {
    pub min_tokens: usize,
    pub min_label_count: usize,
    pub buckets: PenaltyBucketTable,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        PreprocessOptions {
            min_tokens: 10,
            min_label_count: 100,
            buckets: PenaltyBucketTable::default(),
        }
    }
}

/// Old-index to new-index maps produced by [`preprocess_with_remap`],
/// reusable on validation and test splits.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelRemap {
    pub law: Vec<Option<usize>>,
    pub charge: Vec<Option<usize>>,
    labels: LabelVocabularies,
    min_tokens: usize,
    buckets: PenaltyBucketTable,
}

fn dense(keep: &[bool]) -> Vec<Option<usize>> {
    let mut next = 0;
    keep.iter()
        .map(|&k| {
            k.then(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

fn filtered_vocab(v: &LabelVocab, map: &[Option<usize>]) -> LabelVocab {
    LabelVocab::from_names(
        map.iter()
            .enumerate()
            .filter(|(_, m)| m.is_some())
            .map(|(i, _)| v.name(i).to_string()),
    )
}

fn passes_text_rules(c: &LawCase, min_tokens: usize) -> bool {
    !c.multi_label && meaningful_count(&c.fact) >= min_tokens
}

pub fn preprocess(ds: &Dataset, opts: &PreprocessOptions) -> Result<Dataset> {
    preprocess_with_remap(ds, opts).map(|(d, _)| d)
}

/// Drops short and multi-label cases, then repeatedly drops law and charge
/// labels with fewer than `min_label_count` cases (with their cases) until
/// nothing changes, and re-indexes the survivors densely in original order.
pub fn preprocess_with_remap(ds: &Dataset, opts: &PreprocessOptions) -> Result<(Dataset, LabelRemap)> {
    let mut cases: Vec<&LawCase> = ds
        .cases
        .iter()
        .filter(|c| passes_text_rules(c, opts.min_tokens))
        .collect();

    let mut keep_law = vec![true; ds.num_laws()];
    let mut keep_charge = vec![true; ds.num_charges()];
    loop {
        let mut law_counts = vec![0usize; ds.num_laws()];
        let mut charge_counts = vec![0usize; ds.num_charges()];
        for c in &cases {
            law_counts[c.law_label] += 1;
            charge_counts[c.charge_label] += 1;
        }
        let mut changed = false;
        for (k, &n) in keep_law.iter_mut().zip(&law_counts) {
            if *k && n < opts.min_label_count {
                *k = false;
                changed = true;
            }
        }
        for (k, &n) in keep_charge.iter_mut().zip(&charge_counts) {
            if *k && n < opts.min_label_count {
                *k = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        cases.retain(|c| keep_law[c.law_label] && keep_charge[c.charge_label]);
    }

    if cases.is_empty() {
        return Err(Error::EmptyAfterFilter(format!(
            "no case survives min_tokens={} and min_label_count={}; try lower thresholds",
            opts.min_tokens, opts.min_label_count
        )));
    }

    let law_map = dense(&keep_law);
    let charge_map = dense(&keep_charge);
    let labels = LabelVocabularies {
        law: filtered_vocab(&ds.labels.law, &law_map),
        charge: filtered_vocab(&ds.labels.charge, &charge_map),
        penalty: ds.labels.penalty.clone(),
    };
    let remap = LabelRemap {
        law: law_map,
        charge: charge_map,
        labels,
        min_tokens: opts.min_tokens,
        buckets: opts.buckets.clone(),
    };
    let out = remap.apply(ds);
    Ok((out, remap))
}

impl LabelRemap {
    pub fn labels(&self) -> &LabelVocabularies {
        &self.labels
    }

    /// Applies the text rules and label map to another split of the same
    /// corpus. Cases whose labels were dropped are removed.
    pub fn apply(&self, ds: &Dataset) -> Dataset {
        let cases = ds
            .cases
            .iter()
            .filter(|c| passes_text_rules(c, self.min_tokens))
            .filter_map(|c| {
                let law = self.law.get(c.law_label).copied().flatten()?;
                let charge = self.charge.get(c.charge_label).copied().flatten()?;
                Some(LawCase {
                    fact: c.fact.clone(),
                    law_label: law,
                    charge_label: charge,
                    penalty_label: self.buckets.bucket(c.raw_penalty),
                    raw_penalty: c.raw_penalty,
                    multi_label: false,
                })
            })
            .collect();
        let articles = ds
            .articles
            .iter()
            .filter_map(|a| {
                let id = self.law.get(a.article_id).copied().flatten()?;
                Some(LawArticle {
                    article_id: id,
                    text: a.text.clone(),
                })
            })
            .collect();
        Dataset {
            cases,
            articles,
            labels: self.labels.clone(),
            split: ds.split,
        }
    }
}
