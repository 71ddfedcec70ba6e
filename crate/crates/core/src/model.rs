//! Model assembly: basic, prior and revised fact representations, per-task
//! decoders and cosine classifiers.
//!
//! A forward pass is split in two. The shared part depends only on the
//! parameters and memories (article encodings, law distillation, memory
//! distillation) and is computed once per step. The per-case part takes
//! the shared values as graph inputs, so cases can run in parallel and
//! their gradients with respect to the shared values are summed before the
//! shared graph is differentiated.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::corpus::{Dataset, EncodedFact, LawArticle, LawCase, Vocab};
use crate::encoders::{hierarchical_encode, AttentionQuery, EncoderDims, EncoderParams};
use crate::error::{Error, Result};
use crate::law_distill::{community_betas, distill_law_articles, select_prior_context, GdoParams, PriorContextParams};
use crate::memory_distill::{
    distill_memory, match_memory, normalized_keys, MemoryTask, RevisedContextParams, RevisedMemory,
};
use crate::parallel::{map_chunks, Parallelism, CHUNK};
use crate::params::{glorot, ParamId, ParamStore};
use crate::prior_graph::{CommunityPartition, Threshold};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    Law,
    Charge,
    Penalty,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Law, Task::Charge, Task::Penalty];

    pub fn name(self) -> &'static str {
        match self {
            Task::Law => "law",
            Task::Charge => "charge",
            Task::Penalty => "penalty",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Architecture variants used for ablation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ablation {
    #[default]
    #[serde(rename = "full")]
    Full,
    #[serde(rename = "no_RM")]
    NoRm,
    #[serde(rename = "no_GCL")]
    NoGcl,
    #[serde(rename = "no_GDO")]
    NoGdo,
    #[serde(rename = "no_All")]
    NoAll,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::Full,
        Ablation::NoRm,
        Ablation::NoGcl,
        Ablation::NoGdo,
        Ablation::NoAll,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoRm => "no_RM",
            Ablation::NoGcl => "no_GCL",
            Ablation::NoGdo => "no_GDO",
            Ablation::NoAll => "no_All",
        }
    }

    pub fn uses_memory(self) -> bool {
        !matches!(self, Ablation::NoRm | Ablation::NoAll)
    }

    pub fn gdo_layers(self, configured: usize) -> usize {
        match self {
            Ablation::NoGdo | Ablation::NoAll => 0,
            _ => configured,
        }
    }

    pub fn threshold(self, theta: f64) -> Threshold {
        match self {
            Ablation::NoGcl => Threshold::Value(0.0),
            Ablation::NoAll => Threshold::Singletons,
            _ => Threshold::Value(theta),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown ablation `{s}` (expected one of full, no_RM, no_GCL, no_GDO, no_All)"
                ))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Revised branch frozen at zero, memories untouched.
    Warmup,
    Main,
    Inference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub d_w: usize,
    pub d_s: usize,
    pub d_l: usize,
    /// Configured GDO depth before the ablation override.
    pub gdo_layers: usize,
    pub num_laws: usize,
    pub num_charges: usize,
    pub num_penalties: usize,
    pub variant: Ablation,
    /// Adds a second revised representation driven by the charge memory.
    pub charge_revised: bool,
    pub gdo_tanh: bool,
    pub memory_temperature: f64,
    pub tau_init: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn effective_gdo_layers(&self) -> usize {
        self.variant.gdo_layers(self.gdo_layers)
    }

    /// Width of distilled vectors: `d_l` after at least one GDO layer.
    pub fn d_h(&self) -> usize {
        if self.effective_gdo_layers() > 0 {
            self.d_l
        } else {
            self.d_s
        }
    }

    pub fn num_classes(&self, task: Task) -> usize {
        match task {
            Task::Law => self.num_laws,
            Task::Charge => self.num_charges,
            Task::Penalty => self.num_penalties,
        }
    }

    fn revised_tasks(&self) -> Vec<MemoryTask> {
        match (self.variant.uses_memory(), self.charge_revised) {
            (false, _) => vec![],
            (true, false) => vec![MemoryTask::Law],
            (true, true) => vec![MemoryTask::Law, MemoryTask::Charge],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("d_w", self.d_w),
            ("d_s", self.d_s),
            ("d_l", self.d_l),
            ("embedding_dim", self.embedding_dim),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.d_w % 2 != 0 || self.d_s % 2 != 0 {
            return Err(Error::Config("d_w and d_s must be even (bidirectional halves)".into()));
        }
        if self.num_laws == 0 || self.num_charges == 0 || self.num_penalties == 0 {
            return Err(Error::Config("every task needs at least one class".into()));
        }
        if !(self.tau_init > 0.0) || !(self.memory_temperature > 0.0) {
            return Err(Error::Config("tau_init and memory_temperature must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Decoder {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Classifier {
    /// `W_p`, `d_s x C`.
    pub w: ParamId,
    /// `ln τ`, so `τ > 0` always.
    pub log_tau: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RevisedBranch {
    pub task: MemoryTask,
    pub encoder: EncoderParams,
    pub gdo: GdoParams,
    pub context: RevisedContextParams,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelParams {
    pub embedding: ParamId,
    pub basic: EncoderParams,
    pub article: EncoderParams,
    pub prior: EncoderParams,
    pub law_gdo: GdoParams,
    pub prior_context: PriorContextParams,
    pub revised: Vec<RevisedBranch>,
    pub decoders: Vec<Decoder>,
    pub classifiers: Vec<Classifier>,
}

/// All trainable parameters plus the frozen structures they operate on.
#[derive(Clone, Debug)]
pub struct ModelState {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub params: ModelParams,
    /// Law then charge memory; empty for variants without memory.
    pub memories: Vec<RevisedMemory>,
    pub partition: CommunityPartition,
    pub articles: Vec<EncodedFact>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub fact: EncodedFact,
    pub law: usize,
    pub charge: usize,
    pub penalty: usize,
}

impl Example {
    pub fn target(&self, task: Task) -> usize {
        match task {
            Task::Law => self.law,
            Task::Charge => self.charge,
            Task::Penalty => self.penalty,
        }
    }
}

pub fn encode_case(case: &LawCase, vocab: &Vocab) -> Example {
    Example {
        fact: vocab.encode(&case.fact),
        law: case.law_label,
        charge: case.charge_label,
        penalty: case.penalty_label,
    }
}

pub fn encode_dataset(ds: &Dataset, vocab: &Vocab) -> Vec<Example> {
    ds.cases.iter().map(|c| encode_case(c, vocab)).collect()
}

/// Shared per-step values handed to every per-case graph.
#[derive(Clone, Debug)]
pub struct SharedValues {
    /// Community distinction vectors as columns (`2 d_H x k`).
    pub betas: Tensor,
    /// Per revised branch: `γ` (`d_H x n`) and normalized keys (`n x d_s`).
    pub gammas: Vec<Tensor>,
    pub keys: Vec<Tensor>,
}

/// The shared graph kept alive for the backward pass.
pub struct SharedForward<'p> {
    pub graph: Graph<'p>,
    pub betas: Var,
    pub gammas: Vec<Var>,
    pub values: SharedValues,
}

/// Per-case graph handles.
#[derive(Clone, Debug)]
pub struct CaseVars {
    pub betas: Var,
    pub gammas: Vec<Var>,
    pub v_b: Var,
    pub v_p: Var,
    pub v_r: Vec<Var>,
    pub task_logits: [Var; 3],
    pub community_logits: Var,
    pub community_probs: Var,
    pub memory_logits: Vec<(MemoryTask, Var)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub law: Vec<f64>,
    pub charge: Vec<f64>,
    pub penalty: Vec<f64>,
    /// `X̂`.
    pub community: Vec<f64>,
    /// `Ŝ` per active memory; empty during warm-up and for memory-free variants.
    pub memory: Vec<(MemoryTask, Vec<f64>)>,
}

impl Prediction {
    pub fn probs(&self, task: Task) -> &[f64] {
        match task {
            Task::Law => &self.law,
            Task::Charge => &self.charge,
            Task::Penalty => &self.penalty,
        }
    }

    pub fn argmax(&self, task: Task) -> usize {
        let p = self.probs(task);
        let mut best = 0;
        for (i, &x) in p.iter().enumerate() {
            if x > p[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FactRepresentation {
    pub v_b: Tensor,
    pub v_p: Tensor,
    /// One per revised branch; zero vectors during warm-up.
    pub v_r: Vec<Tensor>,
}

impl FactRepresentation {
    /// `ṽ_f = v_b ⊕ v_p ⊕ v_r`.
    pub fn concat(&self) -> Tensor {
        let mut data = self.v_b.data().to_vec();
        data.extend_from_slice(self.v_p.data());
        for v in &self.v_r {
            data.extend_from_slice(v.data());
        }
        Tensor::vector(data)
    }
}

/// `tanh(W_d ṽ + b_d)`.
pub fn task_decode(g: &mut Graph<'_>, concat: Var, decoder: &Decoder) -> Var {
    let w = g.param(decoder.w);
    let b = g.param(decoder.b);
    let pre = g.linear(w, concat, b);
    g.tanh(pre)
}

/// `τ · cos(feat, column_c)` for every classifier column.
pub fn cosine_logits(g: &mut Graph<'_>, feat: Var, w_p: Var, log_tau: Var) -> Result<Var> {
    let f = g.normalize(feat)?;
    let w = g.normalize_cols(w_p)?;
    let wt = g.transpose(w);
    let cos = g.matmul(wt, f);
    let tau = g.exp(log_tau);
    Ok(g.mul_scalar(cos, tau))
}

/// Softmax of [`cosine_logits`].
pub fn cosine_classify(g: &mut Graph<'_>, feat: Var, w_p: Var, log_tau: Var) -> Result<Var> {
    let logits = cosine_logits(g, feat, w_p, log_tau)?;
    Ok(g.softmax(logits))
}

fn softmax_of(t: &Tensor) -> Vec<f64> {
    crate::tensor::softmax(t.data())
}

impl ModelState {
    /// Fresh parameters. `vocab` provides the initial embedding rows;
    /// `partition` must cover exactly `config.num_laws` articles.
    pub fn new(
        config: ModelConfig,
        vocab: &Vocab,
        articles: &[LawArticle],
        partition: CommunityPartition,
    ) -> Result<Self> {
        config.validate()?;
        if articles.len() != config.num_laws || partition.num_articles() != config.num_laws {
            return Err(Error::Config(format!(
                "{} law labels but {} articles and a partition over {}",
                config.num_laws,
                articles.len(),
                partition.num_articles()
            )));
        }
        if vocab.len() != config.vocab_size || vocab.dim() != config.embedding_dim {
            return Err(Error::VocabMismatch {
                expected: format!("{} x {}", config.vocab_size, config.embedding_dim),
                found: format!("{} x {}", vocab.len(), vocab.dim()),
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let c = &config;
        let layers = c.effective_gdo_layers();
        let d_h = c.d_h();
        let enc = |context| EncoderDims {
            embedding: c.embedding_dim,
            word_hidden: c.d_w,
            sentence_hidden: c.d_s,
            context,
        };
        let embedding = store.add("embedding", vocab.embeddings().clone());
        let basic = EncoderParams::new(&mut store, &mut rng, "basic", enc(None));
        let article = EncoderParams::new(&mut store, &mut rng, "article", enc(None));
        let prior = EncoderParams::new(&mut store, &mut rng, "prior", enc(Some(2 * d_h)));
        let mut law_gdo = GdoParams::new(&mut store, &mut rng, "law_gdo", c.d_s, c.d_l, layers);
        law_gdo.tanh_between = c.gdo_tanh;
        let prior_context =
            PriorContextParams::new(&mut store, &mut rng, "prior_ctx", partition.num_communities(), c.d_s);
        let mut revised = Vec::new();
        for task in c.revised_tasks() {
            let name = task.name();
            let encoder = EncoderParams::new(&mut store, &mut rng, &format!("revised_{name}"), enc(Some(d_h)));
            let mut gdo = GdoParams::new(&mut store, &mut rng, &format!("mem_gdo_{name}"), c.d_s, c.d_l, layers);
            gdo.tanh_between = c.gdo_tanh;
            let context = RevisedContextParams::new(&mut store, &mut rng, &format!("revised_ctx_{name}"), c.d_s, c.d_s);
            revised.push(RevisedBranch {
                task,
                encoder,
                gdo,
                context,
            });
        }
        let concat_dim = c.d_s * (2 + revised.len());
        let mut decoders = Vec::new();
        let mut classifiers = Vec::new();
        for task in Task::ALL {
            let name = task.name();
            decoders.push(Decoder {
                w: store.add(format!("decoder_{name}.w"), glorot(c.d_s, concat_dim, &mut rng)),
                b: store.add(format!("decoder_{name}.b"), Tensor::zeros(c.d_s, 1)),
            });
            classifiers.push(Classifier {
                w: store.add(
                    format!("classifier_{name}.w"),
                    glorot(c.d_s, c.num_classes(task), &mut rng),
                ),
                log_tau: store.add(format!("classifier_{name}.log_tau"), Tensor::scalar(c.tau_init.ln())),
            });
        }
        let memories = if c.variant.uses_memory() {
            vec![
                RevisedMemory::uninitialized(MemoryTask::Law, c.num_laws, c.d_s),
                RevisedMemory::uninitialized(MemoryTask::Charge, c.num_charges, c.d_s),
            ]
        } else {
            Vec::new()
        };
        let articles = articles.iter().map(|a| vocab.encode(&a.text)).collect();
        Ok(ModelState {
            params: ModelParams {
                embedding,
                basic,
                article,
                prior,
                law_gdo,
                prior_context,
                revised,
                decoders,
                classifiers,
            },
            config,
            store,
            memories,
            partition,
            articles,
        })
    }

    pub fn memory(&self, task: MemoryTask) -> Option<&RevisedMemory> {
        self.memories.iter().find(|m| m.task == task)
    }

    pub fn memory_mut(&mut self, task: MemoryTask) -> Option<&mut RevisedMemory> {
        self.memories.iter_mut().find(|m| m.task == task)
    }

    /// Classifier of the task a memory mirrors.
    pub fn classifier_for(&self, task: MemoryTask) -> &Classifier {
        match task {
            MemoryTask::Law => &self.params.classifiers[Task::Law.index()],
            MemoryTask::Charge => &self.params.classifiers[Task::Charge.index()],
        }
    }

    fn uses_revised(&self, phase: Phase) -> Result<bool> {
        if self.params.revised.is_empty() || phase == Phase::Warmup {
            return Ok(false);
        }
        for b in &self.params.revised {
            match self.memory(b.task) {
                Some(m) if m.initialized => {}
                _ => {
                    return Err(Error::Memory(format!(
                        "{} memory must be initialized before the {phase:?} phase",
                        b.task.name()
                    )))
                }
            }
        }
        Ok(true)
    }

    /// Article encodings, law distillation and (outside warm-up) memory
    /// distillation, recorded on a graph that can be differentiated later.
    pub fn shared_forward(&self, phase: Phase) -> Result<SharedForward<'_>> {
        let mut g = Graph::new(&self.store);
        let emb = g.param(self.params.embedding);
        let reps = self
            .articles
            .iter()
            .map(|a| hierarchical_encode(&mut g, a, emb, &self.params.article, AttentionQuery::Learned))
            .collect::<Result<Vec<_>>>()?;
        let reps = g.stack_cols(&reps);
        let distilled = distill_law_articles(&mut g, reps, &self.partition, &self.params.law_gdo)?;
        let betas = community_betas(&mut g, distilled, &self.partition)?;
        let mut gammas = Vec::new();
        let mut keys = Vec::new();
        if self.uses_revised(phase)? {
            for b in &self.params.revised {
                let mem = self.memory(b.task).expect("checked above");
                gammas.push(distill_memory(&mut g, mem, &b.gdo)?);
                keys.push(normalized_keys(mem)?);
            }
        }
        let values = SharedValues {
            betas: g.value(betas).clone(),
            gammas: gammas.iter().map(|&v| g.value(v).clone()).collect(),
            keys,
        };
        Ok(SharedForward {
            graph: g,
            betas,
            gammas,
            values,
        })
    }

    /// Records one case on `g`, reading shared values as input leaves.
    pub fn case_forward(
        &self,
        g: &mut Graph<'_>,
        shared: &SharedValues,
        fact: &EncodedFact,
        phase: Phase,
    ) -> Result<CaseVars> {
        let p = &self.params;
        let betas = g.input(shared.betas.clone());
        let gammas: Vec<Var> = shared.gammas.iter().map(|t| g.input(t.clone())).collect();
        let emb = g.param(p.embedding);
        let v_b = hierarchical_encode(g, fact, emb, &p.basic, AttentionQuery::Learned)?;
        let ctx = select_prior_context(g, v_b, betas, &p.prior_context)?;
        let v_p = hierarchical_encode(g, fact, emb, &p.prior, AttentionQuery::Context(ctx.beta_hat))?;

        let mut v_r = Vec::new();
        let mut memory_logits = Vec::new();
        let active = phase != Phase::Warmup && !p.revised.is_empty();
        if active && gammas.len() != p.revised.len() {
            return Err(Error::Memory("shared values lack memory distillation".into()));
        }
        for (i, b) in p.revised.iter().enumerate() {
            if active {
                let m = match_memory(
                    g,
                    v_b,
                    v_p,
                    &shared.keys[i],
                    gammas[i],
                    &b.context,
                    self.config.memory_temperature,
                )?;
                memory_logits.push((b.task, m.logits));
                v_r.push(hierarchical_encode(g, fact, emb, &b.encoder, AttentionQuery::Context(m.gamma_hat))?);
            } else {
                v_r.push(g.constant(Tensor::zeros(self.config.d_s, 1)));
            }
        }

        let mut parts = vec![v_b, v_p];
        parts.extend(&v_r);
        let concat = g.concat(&parts);
        let mut logits = Vec::with_capacity(3);
        for task in Task::ALL {
            let feat = task_decode(g, concat, &p.decoders[task.index()]);
            let cls = &p.classifiers[task.index()];
            let w = g.param(cls.w);
            let t = g.param(cls.log_tau);
            logits.push(cosine_logits(g, feat, w, t)?);
        }
        Ok(CaseVars {
            betas,
            gammas,
            v_b,
            v_p,
            v_r,
            task_logits: [logits[0], logits[1], logits[2]],
            community_logits: ctx.logits,
            community_probs: ctx.probs,
            memory_logits,
        })
    }

    fn read_prediction(g: &Graph<'_>, vars: &CaseVars) -> (Prediction, FactRepresentation) {
        let pred = Prediction {
            law: softmax_of(g.value(vars.task_logits[0])),
            charge: softmax_of(g.value(vars.task_logits[1])),
            penalty: softmax_of(g.value(vars.task_logits[2])),
            community: g.value(vars.community_probs).data().to_vec(),
            memory: vars
                .memory_logits
                .iter()
                .map(|(t, v)| (*t, softmax_of(g.value(*v))))
                .collect(),
        };
        let rep = FactRepresentation {
            v_b: g.value(vars.v_b).clone(),
            v_p: g.value(vars.v_p).clone(),
            v_r: vars.v_r.iter().map(|&v| g.value(v).clone()).collect(),
        };
        (pred, rep)
    }

    /// Shared values without keeping the graph.
    pub fn shared_values(&self, phase: Phase) -> Result<SharedValues> {
        Ok(self.shared_forward(phase)?.values)
    }

    /// Single-case forward pass.
    pub fn forward(&self, fact: &EncodedFact, phase: Phase) -> Result<(Prediction, FactRepresentation)> {
        let shared = self.shared_values(phase)?;
        self.forward_with(&shared, fact, phase)
    }

    pub fn forward_with(
        &self,
        shared: &SharedValues,
        fact: &EncodedFact,
        phase: Phase,
    ) -> Result<(Prediction, FactRepresentation)> {
        let mut g = Graph::new(&self.store);
        let vars = self.case_forward(&mut g, shared, fact, phase)?;
        Ok(Self::read_prediction(&g, &vars))
    }

    /// Inference over many facts, data-parallel across cases.
    pub fn predict(&self, facts: &[EncodedFact], mode: Parallelism) -> Result<Vec<Prediction>> {
        let shared = self.shared_values(Phase::Inference)?;
        let chunks = map_chunks(facts, CHUNK, mode, |chunk| {
            chunk
                .iter()
                .map(|f| self.forward_with(&shared, f, Phase::Inference).map(|(p, _)| p))
                .collect::<Result<Vec<_>>>()
        });
        let mut out = Vec::with_capacity(facts.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    /// Tensors that belong in a checkpoint: every parameter plus the memory
    /// matrices.
    pub fn named_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> =
            self.store.iter().map(|(_, n, t)| (n.to_string(), t.clone())).collect();
        for m in &self.memories {
            out.push((format!("memory.{}", m.task.name()), m.rows.clone()));
        }
        out
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::corpus::{build_vocab, EmbeddingInit};
    use crate::encoders::pad_batch;
    use crate::gradcheck::{check_inputs, Tolerance};
    use crate::prior_graph::build_partition;

    pub(crate) fn tiny_dataset() -> Dataset {
        crate::corpus::generate_synthetic(&crate::corpus::SynthConfig {
            num_communities: 2,
            articles_per_community: 2,
            cases_per_head_article: 8,
            noise_vocab_size: 10,
            noise_tokens_per_case: 3,
            ..Default::default()
        })
    }

    pub(crate) fn tiny_model(variant: Ablation, dim: usize) -> (ModelState, Vec<Example>) {
        let ds = tiny_dataset();
        let vocab = build_vocab(&ds, 1, dim, EmbeddingInit::Random { seed: 3 }).unwrap();
        let cfg = ModelConfig {
            vocab_size: vocab.len(),
            embedding_dim: dim,
            d_w: dim,
            d_s: dim,
            d_l: dim,
            gdo_layers: 2,
            num_laws: ds.num_laws(),
            num_charges: ds.num_charges(),
            num_penalties: ds.num_penalties(),
            variant,
            charge_revised: false,
            gdo_tanh: false,
            memory_temperature: 1.0,
            tau_init: 10.0,
            seed: 5,
        };
        let partition = build_partition(&ds.articles, variant.threshold(0.35)).unwrap();
        let state = ModelState::new(cfg, &vocab, &ds.articles, partition).unwrap();
        (state, encode_dataset(&ds, &vocab))
    }

    pub(crate) fn init_memories(state: &mut ModelState) {
        for i in 0..state.memories.len() {
            let task = state.memories[i].task;
            let w = state.store.get(state.classifier_for(task).w).transpose();
            let m = &mut state.memories[i];
            m.rows = w;
            m.initialized = true;
        }
    }

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(a.name().parse::<Ablation>().unwrap(), a);
            let json = serde_json::to_string(&a).unwrap();
            assert_eq!(json, format!("\"{}\"", a.name()));
        }
        assert!("nope".parse::<Ablation>().is_err());
    }

    #[test]
    fn decode_examples() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d0 = Decoder {
            w: store.add("d0.w", glorot(3, 6, &mut rng)),
            b: store.add("d0.b", Tensor::zeros(3, 1)),
        };
        let d1 = Decoder {
            w: store.add("d1.w", glorot(3, 6, &mut rng)),
            b: store.add("d1.b", Tensor::zeros(3, 1)),
        };
        let mut g = Graph::new(&store);
        let z = g.input(Tensor::zeros(6, 1));
        let out = task_decode(&mut g, z, &d0);
        assert!(g.value(out).data().iter().all(|&x| x == 0.0));
        let x = g.input(Tensor::uniform(6, 1, 1.0, &mut rng));
        let a = task_decode(&mut g, x, &d0);
        let b = task_decode(&mut g, x, &d1);
        assert!(g.value(a).max_abs_diff(g.value(b)) > 1e-3);
    }

    #[test]
    fn decode_gradients() {
        for seed in 0..5 {
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = Decoder {
                w: store.add("d.w", glorot(3, 6, &mut rng)),
                b: store.add("d.b", Tensor::uniform(3, 1, 0.5, &mut rng)),
            };
            let x = Tensor::uniform(6, 1, 1.0, &mut rng);
            check_inputs(&store, &[x], seed, |g, x| Ok(task_decode(g, x[0], &d)))
                .unwrap()
                .assert_within(Tolerance::default());
        }
    }

    #[test]
    fn cosine_classify_examples() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let tau = g.input(Tensor::scalar(10f64.ln()));
        let w = g.input(Tensor::from_rows(&[vec![0.0, 2.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 0.0, 5.0]]));
        let feat = g.input(Tensor::vector(vec![0.0, 3.0, 0.0]));
        let logits = cosine_logits(&mut g, feat, w, tau).unwrap();
        let l = g.value(logits).data().to_vec();
        assert!((l[0] - 10.0).abs() < 1e-12 && l[1] == 0.0 && l[2] == 0.0);
        assert_eq!(g.value(logits).argmax(), 0);

        let scaled = g.input(Tensor::vector(vec![0.0, 3.0 * 7.5, 0.0]));
        let l2 = cosine_logits(&mut g, scaled, w, tau).unwrap();
        assert_eq!(g.value(l2).data(), l.as_slice());

        // Hand computation: feat (1, 1), columns (1, 0) and (1, 1), τ = 10.
        // cos = (1/√2, 1); p_1 = 1 / (1 + exp(10 − 10/√2)).
        let w = g.input(Tensor::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]));
        let feat = g.input(Tensor::vector(vec![1.0, 1.0]));
        let probs = cosine_classify(&mut g, feat, w, tau).unwrap();
        let p0 = 1.0 / (1.0 + (10.0 - 10.0 / 2f64.sqrt()).exp());
        assert!((g.value(probs).data()[0] - p0).abs() < 1e-12);
        assert!((g.value(probs).data()[1] - (1.0 - p0)).abs() < 1e-12);

        let zero = g.input(Tensor::zeros(2, 1));
        assert!(matches!(cosine_logits(&mut g, zero, w, tau), Err(Error::ZeroNorm(_))));
        let wz = g.input(Tensor::zeros(2, 2));
        assert!(cosine_logits(&mut g, feat, wz, tau).is_err());
    }

    #[test]
    fn cosine_classify_gradients() {
        for seed in 0..5 {
            let store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let inputs = [
                Tensor::uniform(4, 1, 1.0, &mut rng),
                Tensor::uniform(4, 3, 1.0, &mut rng),
                Tensor::scalar(1.5),
            ];
            check_inputs(&store, &inputs, seed, |g, x| cosine_classify(g, x[0], x[1], x[2]))
                .unwrap()
                .assert_within(Tolerance::default());
        }
    }

    #[test]
    fn warmup_zeroes_revised_branch() {
        let (state, ex) = tiny_model(Ablation::Full, 6);
        let (pred, rep) = state.forward(&ex[0].fact, Phase::Warmup).unwrap();
        assert!(pred.memory.is_empty());
        assert_eq!(rep.v_r.len(), 1);
        assert!(rep.v_r[0].data().iter().all(|&x| x == 0.0));
        for task in Task::ALL {
            assert!((pred.probs(task).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        // Memory is required outside warm-up.
        assert!(matches!(state.forward(&ex[0].fact, Phase::Main), Err(Error::Memory(_))));
    }

    #[test]
    fn warmup_gives_revised_parameters_no_gradient() {
        let (state, ex) = tiny_model(Ablation::Full, 6);
        let shared = state.shared_values(Phase::Warmup).unwrap();
        let mut g = Graph::new(&state.store);
        let vars = state.case_forward(&mut g, &shared, &ex[0].fact, Phase::Warmup).unwrap();
        let l = g.cross_entropy(vars.task_logits[0], ex[0].law);
        let back = g.backward(l);
        let b = &state.params.revised[0];
        for id in b.encoder.ids().into_iter().chain([b.context.w_k]) {
            assert!(back.params().get(id).map_or(true, |t| t.norm() == 0.0));
        }
    }

    #[test]
    fn inference_is_deterministic_and_normalized() {
        let (mut state, ex) = tiny_model(Ablation::Full, 6);
        init_memories(&mut state);
        let (a, rep) = state.forward(&ex[3].fact, Phase::Inference).unwrap();
        let (b, _) = state.forward(&ex[3].fact, Phase::Inference).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.memory.len(), 1);
        assert!(rep.v_r[0].norm() > 0.0);
        assert_eq!(rep.concat().len(), 18);
        for task in Task::ALL {
            assert!((a.probs(task).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
        let seq = state
            .predict(&ex.iter().map(|e| e.fact.clone()).collect::<Vec<_>>(), Parallelism::Sequential)
            .unwrap();
        let par = state
            .predict(&ex.iter().map(|e| e.fact.clone()).collect::<Vec<_>>(), Parallelism::Parallel)
            .unwrap();
        assert_eq!(seq, par);
        assert_eq!(seq[3], a);
    }

    #[test]
    fn padded_batch_matches_single_case() {
        let (mut state, ex) = tiny_model(Ablation::Full, 6);
        init_memories(&mut state);
        let facts: Vec<EncodedFact> = ex.iter().take(6).map(|e| e.fact.clone()).collect();
        let padded = pad_batch(&facts);
        let shared = state.shared_values(Phase::Inference).unwrap();
        for (f, p) in facts.iter().zip(&padded) {
            let a = state.forward_with(&shared, f, Phase::Inference).unwrap().0;
            let b = state.forward_with(&shared, p, Phase::Inference).unwrap().0;
            for task in Task::ALL {
                for (x, y) in a.probs(task).iter().zip(b.probs(task)) {
                    assert!((x - y).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn variants_shape_the_model() {
        let (no_rm, _) = tiny_model(Ablation::NoRm, 4);
        assert!(no_rm.memories.is_empty());
        assert!(no_rm.named_tensors().iter().all(|(n, _)| !n.starts_with("memory")));
        assert!(no_rm.params.revised.is_empty());
        let (gcl, _) = tiny_model(Ablation::NoGcl, 4);
        assert_eq!(gcl.partition.num_communities(), 1);
        let (gdo, _) = tiny_model(Ablation::NoGdo, 4);
        assert!(gdo.params.law_gdo.layers.is_empty());
        let (all, _) = tiny_model(Ablation::NoAll, 4);
        assert_eq!(all.partition.num_communities(), 4);
        assert!(all.memories.is_empty());
        let (full, _) = tiny_model(Ablation::Full, 4);
        assert_eq!(full.memories.len(), 2);
        // Encoders never share parameters.
        let p = &full.params;
        let sets = [p.basic.ids(), p.prior.ids(), p.revised[0].encoder.ids(), p.article.ids()];
        for i in 0..sets.len() {
            for j in (i + 1)..sets.len() {
                assert!(sets[i].iter().all(|id| !sets[j].contains(id)));
            }
        }
    }
}
