//! Training objective and batch gradients.
//!
//! Per case: `L_p + λ_c L_c` during warm-up and `L_p + λ_c L_c + λ_m L_m`
//! afterwards, where `L_p` sums the three task cross-entropies, `L_c` is the
//! cross-entropy of `X̂` against the gold article's community and `L_m` that
//! of `Ŝ` against the label bound to each memory. Batches take the mean.

use std::ops::AddAssign;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::memory_distill::MemoryTask;
use crate::model::{CaseVars, Example, ModelState, Phase, Prediction, Task};
use crate::parallel::{map_chunks, Parallelism, CHUNK};
use crate::params::Grads;
use crate::prior_graph::CommunityPartition;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_c: f64,
    pub lambda_m: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    /// `L_p`.
    pub prediction: f64,
    /// `L_c`.
    pub community: f64,
    /// `L_m`.
    pub memory: f64,
    /// Weighted total.
    pub total: f64,
}

impl AddAssign for LossParts {
    fn add_assign(&mut self, o: Self) {
        self.prediction += o.prediction;
        self.community += o.community;
        self.memory += o.memory;
        self.total += o.total;
    }
}

impl LossParts {
    pub fn scaled(self, c: f64) -> Self {
        LossParts {
            prediction: self.prediction * c,
            community: self.community * c,
            memory: self.memory * c,
            total: self.total * c,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.prediction.is_finite() && self.community.is_finite() && self.memory.is_finite()
    }
}

fn memory_target(task: MemoryTask, ex: &Example) -> usize {
    match task {
        MemoryTask::Law => ex.law,
        MemoryTask::Charge => ex.charge,
    }
}

fn ce(probs: &[f64], target: usize) -> f64 {
    let l = -probs[target].ln();
    if l == 0.0 {
        0.0
    } else {
        l
    }
}

/// Loss of one case from probability vectors.
pub fn compute_loss(
    pred: &Prediction,
    ex: &Example,
    partition: &CommunityPartition,
    weights: LossWeights,
    phase: Phase,
) -> LossParts {
    let prediction: f64 = Task::ALL.iter().map(|&t| ce(pred.probs(t), ex.target(t))).sum();
    let community = ce(&pred.community, partition.membership[ex.law]);
    let memory = if phase == Phase::Warmup {
        0.0
    } else {
        pred.memory.iter().map(|(t, p)| ce(p, memory_target(*t, ex))).sum()
    };
    LossParts {
        prediction,
        community,
        memory,
        total: prediction + weights.lambda_c * community + weights.lambda_m * memory,
    }
}

/// Graph version of [`compute_loss`] for one case.
pub fn case_loss(
    g: &mut Graph<'_>,
    vars: &CaseVars,
    ex: &Example,
    partition: &CommunityPartition,
    weights: LossWeights,
    phase: Phase,
) -> (Var, LossParts) {
    let task_terms: Vec<Var> = Task::ALL
        .iter()
        .map(|&t| g.cross_entropy(vars.task_logits[t.index()], ex.target(t)))
        .collect();
    let l_p = g.add_many(&task_terms);
    let l_c = g.cross_entropy(vars.community_logits, partition.membership[ex.law]);
    let mut terms = vec![l_p];
    terms.push(g.scale(l_c, weights.lambda_c));
    let mut memory = 0.0;
    if phase != Phase::Warmup && !vars.memory_logits.is_empty() {
        let mem_terms: Vec<Var> = vars
            .memory_logits
            .iter()
            .map(|(t, v)| g.cross_entropy(*v, memory_target(*t, ex)))
            .collect();
        let l_m = g.add_many(&mem_terms);
        memory = g.value(l_m).data()[0];
        terms.push(g.scale(l_m, weights.lambda_m));
    }
    let total = g.add_many(&terms);
    let parts = LossParts {
        prediction: g.value(l_p).data()[0],
        community: g.value(l_c).data()[0],
        memory,
        total: g.value(total).data()[0],
    };
    (total, parts)
}

#[derive(Clone, Debug)]
pub struct BatchGradients {
    /// Batch-mean loss.
    pub loss: LossParts,
    pub grads: Grads,
}

struct ChunkResult {
    loss: LossParts,
    grads: Grads,
    betas: Tensor,
    gammas: Vec<Tensor>,
}

fn add_into(acc: &mut Tensor, g: Option<&Tensor>) {
    if let Some(g) = g {
        acc.add_assign(g);
    }
}

/// Mean loss over `batch` and its gradient with respect to every parameter.
pub fn batch_gradients(
    state: &ModelState,
    batch: &[Example],
    phase: Phase,
    weights: LossWeights,
    mode: Parallelism,
) -> Result<BatchGradients> {
    let shared = state.shared_forward(phase)?;
    let values = &shared.values;
    let scale = 1.0 / batch.len().max(1) as f64;
    let n_params = state.store.len();
    let zero_like = |t: &Tensor| Tensor::zeros(t.rows(), t.cols());

    let chunks = map_chunks(batch, CHUNK, mode, |chunk| -> Result<ChunkResult> {
        let mut acc = ChunkResult {
            loss: LossParts::default(),
            grads: Grads::new(n_params),
            betas: zero_like(&values.betas),
            gammas: values.gammas.iter().map(zero_like).collect(),
        };
        for ex in chunk {
            let mut g = Graph::new(&state.store);
            let vars = state.case_forward(&mut g, values, &ex.fact, phase)?;
            let (total, parts) = case_loss(&mut g, &vars, ex, &state.partition, weights, phase);
            let back = g.backward_with(vec![(total, Tensor::scalar(scale))]);
            add_into(&mut acc.betas, back.grad(vars.betas));
            for (a, &v) in acc.gammas.iter_mut().zip(&vars.gammas) {
                add_into(a, back.grad(v));
            }
            acc.grads.merge(back.into_params());
            acc.loss += parts.scaled(scale);
        }
        Ok(acc)
    });

    let mut loss = LossParts::default();
    let mut grads = Grads::new(n_params);
    let mut beta_grad = zero_like(&values.betas);
    let mut gamma_grads: Vec<Tensor> = values.gammas.iter().map(zero_like).collect();
    for c in chunks {
        let c = c?;
        loss += c.loss;
        grads.merge(c.grads);
        beta_grad.add_assign(&c.betas);
        for (a, b) in gamma_grads.iter_mut().zip(&c.gammas) {
            a.add_assign(b);
        }
    }
    let mut seeds = vec![(shared.betas, beta_grad)];
    seeds.extend(shared.gammas.iter().copied().zip(gamma_grads));
    grads.merge(shared.graph.backward_with(seeds).into_params());
    Ok(BatchGradients { loss, grads })
}

/// Mean loss without gradients.
pub fn batch_loss(
    state: &ModelState,
    batch: &[Example],
    phase: Phase,
    weights: LossWeights,
    mode: Parallelism,
) -> Result<LossParts> {
    let values = state.shared_values(phase)?;
    let scale = 1.0 / batch.len().max(1) as f64;
    let chunks = map_chunks(batch, CHUNK, mode, |chunk| -> Result<LossParts> {
        let mut acc = LossParts::default();
        for ex in chunk {
            let mut g = Graph::new(&state.store);
            let vars = state.case_forward(&mut g, &values, &ex.fact, phase)?;
            let (_, parts) = case_loss(&mut g, &vars, ex, &state.partition, weights, phase);
            acc += parts.scaled(scale);
        }
        Ok(acc)
    });
    let mut loss = LossParts::default();
    for c in chunks {
        loss += c?;
    }
    Ok(loss)
}
