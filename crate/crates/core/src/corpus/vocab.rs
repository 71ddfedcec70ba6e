//! Token vocabulary and initial word embeddings.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::Dataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

pub const MAX_SENTENCES: usize = 15;
pub const MAX_SENTENCE_LEN: usize = 100;

pub enum EmbeddingInit<'a> {
    /// Uniform in [-0.1, 0.1] from a seeded generator.
    Random { seed: u64 },
    /// Word2vec text format; tokens absent from the file fall back to the
    /// seeded random rows.
    Imported { path: &'a Path, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
    embeddings: Tensor,
    min_frequency: usize,
}

/// Token ids for one fact, truncated to the sentence and length limits.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EncodedFact {
    pub sentences: Vec<Vec<u32>>,
}

impl EncodedFact {
    pub fn num_tokens(&self) -> usize {
        self.sentences.iter().map(Vec::len).sum()
    }
}

/// Collects every token of the training cases and the article texts,
/// counting frequencies, and keeps those seen at least `min_frequency`
/// times. Ordering is by descending frequency then lexicographic.
pub fn build_vocab(
    train: &Dataset,
    min_frequency: usize,
    embedding_dim: usize,
    init: EmbeddingInit<'_>,
) -> Result<Vocab> {
    if train.cases.is_empty() {
        return Err(Error::Empty("training split has no cases".into()));
    }
    if embedding_dim == 0 {
        return Err(Error::Config("embedding_dim must be positive".into()));
    }
    let mut freq: HashMap<&str, usize> = HashMap::new();
    let case_tokens = train.cases.iter().flat_map(|c| c.fact.iter().flatten());
    let article_tokens = train.articles.iter().flat_map(|a| a.tokens());
    for t in case_tokens.chain(article_tokens) {
        *freq.entry(t.as_str()).or_default() += 1;
    }
    let mut kept: Vec<(&str, usize)> = freq
        .into_iter()
        .filter(|&(t, n)| n >= min_frequency && t != PAD_TOKEN && t != UNK_TOKEN)
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));

    let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
    tokens.extend(kept.into_iter().map(|(t, _)| t.to_string()));

    let seed = match init {
        EmbeddingInit::Random { seed } | EmbeddingInit::Imported { seed, .. } => seed,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut embeddings = Tensor::uniform(tokens.len(), embedding_dim, 0.1, &mut rng);
    embeddings.row_mut(PAD as usize).fill(0.0);

    let mut vocab = Vocab {
        tokens,
        index: HashMap::new(),
        embeddings,
        min_frequency,
    };
    vocab.rebuild_index();

    if let EmbeddingInit::Imported { path, .. } = init {
        vocab.import_rows(path)?;
    }
    Ok(vocab)
}

impl Vocab {
    fn rebuild_index(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
    }

    /// Reassembles a vocabulary from its stored pieces.
    pub fn from_parts(tokens: Vec<String>, embeddings: Tensor, min_frequency: usize) -> Result<Self> {
        if embeddings.rows() != tokens.len() {
            return Err(Error::Shape(format!(
                "{} tokens but {} embedding rows",
                tokens.len(),
                embeddings.rows()
            )));
        }
        let mut v = Vocab {
            tokens,
            index: HashMap::new(),
            embeddings,
            min_frequency,
        };
        v.rebuild_index();
        Ok(v)
    }

    /// Restores the lookup table after deserialization.
    pub fn finish_load(mut self) -> Self {
        self.rebuild_index();
        self
    }

    fn import_rows(&mut self, path: &Path) -> Result<()> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(f).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::EmbeddingFormat("file is empty".into()))?
            .map_err(|e| Error::io(path, e))?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let parsed: Option<(usize, usize)> = match parts.as_slice() {
            [n, d] => n.parse().ok().zip(d.parse().ok()),
            _ => None,
        };
        let (_, dim) = parsed.ok_or_else(|| {
            Error::EmbeddingFormat("first line must be `<vocab_size> <dim>`".into())
        })?;
        if dim != self.dim() {
            return Err(Error::EmbeddingFormat(format!(
                "file dimension {dim} differs from embedding_dim {}",
                self.dim()
            )));
        }
        for (k, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let mut it = line.split_whitespace();
            let Some(token) = it.next() else { continue };
            let values: std::result::Result<Vec<f64>, _> = it.map(str::parse::<f64>).collect();
            let values = values.map_err(|e| {
                Error::EmbeddingFormat(format!("line {}: {e}", k + 2))
            })?;
            if values.len() != dim {
                return Err(Error::EmbeddingFormat(format!(
                    "line {}: expected {dim} values, got {}",
                    k + 2,
                    values.len()
                )));
            }
            if let Some(&id) = self.index.get(token) {
                if id != PAD {
                    self.embeddings.row_mut(id as usize).copy_from_slice(&values);
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn min_frequency(&self) -> usize {
        self.min_frequency
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn encode(&self, sentences: &[Vec<String>]) -> EncodedFact {
        EncodedFact {
            sentences: sentences
                .iter()
                .take(MAX_SENTENCES)
                .map(|s| s.iter().take(MAX_SENTENCE_LEN).map(|t| self.id(t)).collect())
                .filter(|s: &Vec<u32>| !s.is_empty())
                .collect(),
        }
    }

    /// Short content hash of the token list.
    pub fn hash(&self) -> String {
        token_hash(&self.tokens)
    }
}

/// Short digest of an ordered token list; equal lists give equal ids.
pub fn token_hash(tokens: &[String]) -> String {
    let mut h = Sha256::new();
    for t in tokens {
        h.update(t.as_bytes());
        h.update([0u8]);
    }
    let digest = h.finalize();
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}
