//! Cases, law articles, label vocabularies and everything that turns raw
//! case files into model-ready datasets.

pub mod load;
pub mod penalty;
pub mod preprocess;
pub mod synth;
pub mod text;
pub mod vocab;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use load::{load_articles, load_dataset, load_split, write_articles, write_cases, Schema};
pub use penalty::{bucket_penalty, PenaltyBucketTable, RawPenalty, NUM_PENALTY_CLASSES};
pub use preprocess::{preprocess, preprocess_with_remap, LabelRemap, PreprocessOptions};
pub use synth::{generate_synthetic, SynthConfig};
pub use text::TextPipeline;
pub use vocab::{build_vocab, token_hash, EmbeddingInit, EncodedFact, Vocab};

/// One case: sentence-segmented fact text and its three labels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawCase {
    pub fact: Vec<Vec<String>>,
    pub law_label: usize,
    pub charge_label: usize,
    pub penalty_label: usize,
    pub raw_penalty: RawPenalty,
    /// Set by the loader when the record named more than one law article
    /// or charge; such cases are dropped by preprocessing.
    #[serde(default)]
    pub multi_label: bool,
}

impl LawCase {
    pub fn num_tokens(&self) -> usize {
        self.fact.iter().map(Vec::len).sum()
    }
}

/// Law article text, already segmented into sentences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LawArticle {
    pub article_id: usize,
    pub text: Vec<Vec<String>>,
}

impl LawArticle {
    pub fn tokens(&self) -> impl Iterator<Item = &String> {
        self.text.iter().flatten()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// Ordered label names with reverse lookup.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LabelVocab {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelVocab {
    pub fn from_names<I: IntoIterator<Item = String>>(names: I) -> Self {
        let mut v = LabelVocab::default();
        for n in names {
            v.insert(n);
        }
        v
    }

    /// Returns the index of `name`, appending it when new.
    pub fn insert(&mut self, name: String) -> usize {
        if let Some(&i) = self.index.get(&name) {
            return i;
        }
        let i = self.names.len();
        self.index.insert(name.clone(), i);
        self.names.push(name);
        i
    }

    pub fn get(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

impl Serialize for LabelVocab {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.names.serialize(s)
    }
}

impl<'de> Deserialize<'de> for LabelVocab {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(LabelVocab::from_names(Vec::<String>::deserialize(d)?))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LabelVocabularies {
    pub law: LabelVocab,
    pub charge: LabelVocab,
    pub penalty: LabelVocab,
}

impl LabelVocabularies {
    pub fn penalty_names() -> LabelVocab {
        LabelVocab::from_names((0..NUM_PENALTY_CLASSES).map(|i| format!("term{i}")))
    }
}

/// Cases of one split plus the statute they are judged against. When
/// articles are present, `articles[i]` is the article of law label `i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub cases: Vec<LawCase>,
    pub articles: Vec<LawArticle>,
    pub labels: LabelVocabularies,
    pub split: Split,
}

impl Dataset {
    pub fn num_laws(&self) -> usize {
        self.labels.law.len()
    }

    pub fn num_charges(&self) -> usize {
        self.labels.charge.len()
    }

    pub fn num_penalties(&self) -> usize {
        self.labels.penalty.len()
    }

    pub fn law_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_laws()];
        for c in &self.cases {
            counts[c.law_label] += 1;
        }
        counts
    }

    pub fn charge_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_charges()];
        for c in &self.cases {
            counts[c.charge_label] += 1;
        }
        counts
    }

    pub fn with_cases(&self, cases: Vec<LawCase>, split: Split) -> Dataset {
        Dataset {
            cases,
            articles: self.articles.clone(),
            labels: self.labels.clone(),
            split,
        }
    }

    /// Splits per law label so every label keeps its share in each part.
    /// Labels with at least one case always keep one training case.
    pub fn stratified_split(&self, train: f64, validation: f64, seed: u64) -> (Dataset, Dataset, Dataset) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_label: Vec<Vec<&LawCase>> = vec![Vec::new(); self.num_laws()];
        for c in &self.cases {
            by_label[c.law_label].push(c);
        }
        let (mut tr, mut va, mut te) = (Vec::new(), Vec::new(), Vec::new());
        for mut group in by_label {
            group.shuffle(&mut rng);
            let n = group.len();
            let n_train = ((n as f64 * train).round() as usize).clamp(n.min(1), n);
            let n_val = ((n as f64 * validation).round() as usize).min(n - n_train);
            for (i, c) in group.into_iter().enumerate() {
                let dst = if i < n_train {
                    &mut tr
                } else if i < n_train + n_val {
                    &mut va
                } else {
                    &mut te
                };
                dst.push(c.clone());
            }
        }
        (
            self.with_cases(tr, Split::Train),
            self.with_cases(va, Split::Validation),
            self.with_cases(te, Split::Test),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stratified_split_keeps_every_label_in_train() {
        let ds = generate_synthetic(&SynthConfig {
            num_communities: 2,
            articles_per_community: 3,
            cases_per_head_article: 40,
            head_tail_imbalance_ratio: 5.0,
            ..SynthConfig::default()
        });
        let (tr, va, te) = ds.stratified_split(0.6, 0.2, 1);
        assert_eq!(tr.cases.len() + va.cases.len() + te.cases.len(), ds.cases.len());
        assert!(tr.law_counts().iter().all(|&c| c > 0));
        assert_eq!(tr.split, Split::Train);
        assert_eq!(te.split, Split::Test);
    }
}
