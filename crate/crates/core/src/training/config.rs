//! Flat key/value training configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{Dataset, PreprocessOptions, Vocab};
use crate::error::{Error, Result};
use crate::model::{Ablation, ModelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub theta: f64,
    pub lambda_momentum: f64,
    pub lambda_c: f64,
    pub lambda_m: f64,
    pub lr: f64,
    pub batch_size: usize,
    /// Main-phase epochs, counted after warm-up.
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub d_w: usize,
    pub d_s: usize,
    pub d_l: usize,
    /// Decoded per-task feature size; must equal `d_s`.
    pub d_f: usize,
    pub gdo_layers: usize,
    pub seed: u64,
    pub ablation: Ablation,

    pub embedding_dim: usize,
    pub min_frequency: usize,
    pub grad_clip: f64,
    pub memory_temperature: f64,
    pub tau_init: f64,
    pub charge_revised: bool,
    pub gdo_tanh: bool,
    pub min_tokens: usize,
    pub min_label_count: usize,
    pub tail_threshold: usize,
    pub train_fraction: f64,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            theta: 0.35,
            lambda_momentum: 0.9,
            lambda_c: 0.1,
            lambda_m: 0.1,
            lr: 0.001,
            batch_size: 128,
            epochs: 32,
            warmup_epochs: 1,
            d_w: 256,
            d_s: 256,
            d_l: 256,
            d_f: 256,
            gdo_layers: 2,
            seed: 0,
            ablation: Ablation::Full,
            embedding_dim: 200,
            min_frequency: 1,
            grad_clip: 5.0,
            memory_temperature: 1.0,
            tau_init: 10.0,
            charge_revised: false,
            gdo_tanh: false,
            min_tokens: 10,
            min_label_count: 100,
            tail_threshold: 200,
            train_fraction: 0.8,
            validation_fraction: 0.1,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn keys() -> Vec<String> {
        match toml::Table::try_from(TrainConfig::default()) {
            Ok(t) => t.keys().cloned().collect(),
            Err(_) => Vec::new(),
        }
    }

    /// Applies one `key=value` override. Values are read as TOML scalars,
    /// falling back to a bare string.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let next = self.with_key(key, value)?;
        next.validate()?;
        *self = next;
        Ok(())
    }

    fn with_key(&self, key: &str, value: &str) -> Result<TrainConfig> {
        let mut table = toml::Table::try_from(&*self).map_err(config_err)?;
        let Some(current) = table.get(key) else {
            return Err(Error::Config(format!(
                "unknown config key `{key}` (known: {})",
                Self::keys().join(", ")
            )));
        };
        let parsed = format!("v = {value}")
            .parse::<toml::Table>()
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        let parsed = match (current, parsed) {
            (toml::Value::Float(_), toml::Value::Integer(i)) => toml::Value::Float(i as f64),
            (_, p) => p,
        };
        table.insert(key.to_string(), parsed);
        let next: TrainConfig = table
            .try_into()
            .map_err(|e| Error::Config(format!("`{key}={value}`: {e}")))?;
        Ok(next)
    }

    /// Applies `KEY=VALUE` strings in order and validates the result as a
    /// whole, so coupled keys such as `d_s` and `d_f` can change together.
    /// On error the config is left untouched.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        let mut next = self.clone();
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{o}` is not KEY=VALUE")))?;
            next = next.with_key(k.trim(), v.trim())?;
        }
        next.validate()?;
        *self = next;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..=1.0).contains(&self.lambda_momentum) {
            return fail("lambda_momentum must be in [0, 1]");
        }
        if !(self.lambda_c >= 0.0 && self.lambda_m >= 0.0) {
            return fail("lambda_c and lambda_m must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return fail("theta must be in [0, 1]");
        }
        if !(self.lr > 0.0) {
            return fail("lr must be positive");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.warmup_epochs == 0 {
            return fail("warmup_epochs must be at least 1");
        }
        if self.d_f != self.d_s {
            return fail("d_f must equal d_s (decoded features feed the d_s-wide classifier)");
        }
        if self.d_w == 0 || self.d_s == 0 || self.d_l == 0 || self.embedding_dim == 0 {
            return fail("dimensions must be positive");
        }
        if self.d_w % 2 != 0 || self.d_s % 2 != 0 {
            return fail("d_w and d_s must be even");
        }
        if !(self.grad_clip > 0.0 && self.memory_temperature > 0.0 && self.tau_init > 0.0) {
            return fail("grad_clip, memory_temperature and tau_init must be positive");
        }
        let (t, v) = (self.train_fraction, self.validation_fraction);
        if !(t > 0.0 && v >= 0.0 && t + v <= 1.0) {
            return fail("train_fraction and validation_fraction must be non-negative, train positive, sum <= 1");
        }
        Ok(())
    }

    pub fn preprocess_options(&self) -> PreprocessOptions {
        PreprocessOptions {
            min_tokens: self.min_tokens,
            min_label_count: self.min_label_count,
            ..Default::default()
        }
    }

    pub fn model_config(&self, vocab: &Vocab, train: &Dataset) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab.len(),
            embedding_dim: vocab.dim(),
            d_w: self.d_w,
            d_s: self.d_s,
            d_l: self.d_l,
            gdo_layers: self.gdo_layers,
            num_laws: train.num_laws(),
            num_charges: train.num_charges(),
            num_penalties: train.num_penalties(),
            variant: self.ablation,
            charge_revised: self.charge_revised,
            gdo_tanh: self.gdo_tanh,
            memory_temperature: self.memory_temperature,
            tau_init: self.tau_init,
            seed: self.seed,
        }
    }
}
