//! On-disk model snapshots.
//!
//! A checkpoint is a directory:
//!
//! * `tensors.bin`: magic `DLTA`, u32 version, u32 count, then per tensor a
//!   u32 name length, the UTF-8 name, u64 rows, u64 cols and the values as
//!   little-endian f64.
//! * `manifest.json`: configs, hashes, step and selection metadata.
//! * `vocab.json`, `labels.json`, `articles.json`, `partition.json`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use crate::corpus::{LabelVocabularies, LawArticle, Vocab};
use crate::error::{Error, Result};
use crate::memory_distill::MemoryTask;
use crate::model::{Ablation, ModelConfig, ModelState};
use crate::prior_graph::CommunityPartition;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"DLTA";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: TrainConfig,
    pub model_config: ModelConfig,
    pub variant: Ablation,
    pub vocab_hash: String,
    pub partition_hash: String,
    pub step: usize,
    pub best_metric: Option<f64>,
    pub best_epoch: Option<usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    min_frequency: usize,
}

/// Everything needed to rebuild a trained model and score new data.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub state: ModelState,
    pub vocab: Vocab,
    pub labels: LabelVocabularies,
    pub articles: Vec<LawArticle>,
    pub config: TrainConfig,
    pub step: usize,
    pub best_metric: Option<f64>,
    pub best_epoch: Option<usize>,
}

fn ck(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_tensors(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rows() as u64).to_le_bytes());
        buf.extend_from_slice(&(t.cols() as u64).to_le_bytes());
        for x in t.data() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| ck("tensors.bin is truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_tensors(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(ck("tensors.bin has a bad magic number"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(ck(format!("unsupported tensor file version {version}")));
    }
    let count = c.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = c.u32()? as usize;
        let name = String::from_utf8(c.take(len)?.to_vec()).map_err(|_| ck("tensor name is not UTF-8"))?;
        let rows = c.u64()? as usize;
        let cols = c.u64()? as usize;
        let n = rows.checked_mul(cols).ok_or_else(|| ck("tensor size overflows"))?;
        let raw = c.take(n.checked_mul(8).ok_or_else(|| ck("tensor size overflows"))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        out.push((name, Tensor::from_vec(rows, cols, data)));
    }
    if c.pos != bytes.len() {
        return Err(ck("trailing bytes after last tensor"));
    }
    Ok(out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

impl Checkpoint {
    pub fn manifest(&self) -> Manifest {
        Manifest {
            config: self.config.clone(),
            model_config: self.state.config.clone(),
            variant: self.state.config.variant,
            vocab_hash: self.vocab.hash(),
            partition_hash: self.state.partition.hash(),
            step: self.step,
            best_metric: self.best_metric,
            best_epoch: self.best_epoch,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_tensors(&dir.join("tensors.bin"), &self.state.named_tensors())?;
        write_json(&dir.join("manifest.json"), &self.manifest())?;
        write_json(
            &dir.join("vocab.json"),
            &VocabFile {
                tokens: self.vocab.tokens().to_vec(),
                min_frequency: self.vocab.min_frequency(),
            },
        )?;
        write_json(&dir.join("labels.json"), &self.labels)?;
        write_json(&dir.join("articles.json"), &self.articles)?;
        write_json(&dir.join("partition.json"), &self.state.partition.to_json())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = read_json(&dir.join("manifest.json"))?;
        let mut tensors = read_tensors(&dir.join("tensors.bin"))?;
        let vf: VocabFile = read_json(&dir.join("vocab.json"))?;
        let labels: LabelVocabularies = read_json(&dir.join("labels.json"))?;
        let articles: Vec<LawArticle> = read_json(&dir.join("articles.json"))?;
        let partition = CommunityPartition::from_json(&read_json(&dir.join("partition.json"))?)?;

        let emb_pos = tensors
            .iter()
            .position(|(n, _)| n == "embedding")
            .ok_or_else(|| ck("missing tensor `embedding`"))?;
        let vocab = Vocab::from_parts(vf.tokens, tensors[emb_pos].1.clone(), vf.min_frequency)?;
        if vocab.hash() != manifest.vocab_hash {
            return Err(ck("vocab.json does not match the manifest hash"));
        }
        if partition.hash() != manifest.partition_hash {
            return Err(ck("partition.json does not match the manifest hash"));
        }

        let mut state = ModelState::new(manifest.model_config.clone(), &vocab, &articles, partition)?;
        let mut seen = vec![false; state.store.len()];
        for (name, t) in tensors.drain(..) {
            if let Some(task) = name.strip_prefix("memory.") {
                let task = match task {
                    "law" => MemoryTask::Law,
                    "charge" => MemoryTask::Charge,
                    _ => return Err(ck(format!("unknown memory tensor `{name}`"))),
                };
                let mem = state
                    .memory_mut(task)
                    .ok_or_else(|| ck(format!("`{name}` stored for a variant without memory")))?;
                if mem.rows.shape() != t.shape() {
                    return Err(ck(format!("`{name}` has shape {:?}, expected {:?}", t.shape(), mem.rows.shape())));
                }
                mem.rows = t;
                mem.initialized = true;
                continue;
            }
            let id = state
                .store
                .id(&name)
                .ok_or_else(|| ck(format!("unexpected tensor `{name}`")))?;
            let slot = state.store.get_mut(id);
            if slot.shape() != t.shape() {
                return Err(ck(format!("`{name}` has shape {:?}, expected {:?}", t.shape(), slot.shape())));
            }
            *slot = t;
            seen[id.index()] = true;
        }
        if let Some(missing) = state.store.ids().find(|id| !seen[id.index()]) {
            return Err(ck(format!("missing tensor `{}`", state.store.name(missing))));
        }
        Ok(Checkpoint {
            state,
            vocab,
            labels,
            articles,
            config: manifest.config,
            step: manifest.step,
            best_metric: manifest.best_metric,
            best_epoch: manifest.best_epoch,
        })
    }
}
