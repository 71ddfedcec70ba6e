//! Two-phase training loop: warm-up without revised memories, then joint
//! training with momentum-synchronised memories.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::TrainConfig;
use super::loss::{batch_gradients, LossParts, LossWeights};
use super::momentum::{momentum_update, warmup_init};
use super::optimizer::Adam;
use crate::error::{Error, Result};
use crate::eval::{evaluate, MetricsReport, TrainFrequencies};
use crate::memory_distill::MemoryTask;
use crate::model::{Example, ModelState, Phase, Task};
use crate::parallel::Parallelism;

#[derive(Clone, Debug, PartialEq)]
pub enum StepEvent {
    Forward { step: usize, phase: Phase },
    OptimizerStep { step: usize },
    MemoryInit { step: usize, task: MemoryTask },
    MomentumUpdate { step: usize, task: MemoryTask },
}

pub trait StepObserver {
    fn on_event(&mut self, event: &StepEvent);
}

impl<F: FnMut(&StepEvent)> StepObserver for F {
    fn on_event(&mut self, event: &StepEvent) {
        self(event)
    }
}

/// Ignores every event.
pub struct NoObserver;

impl StepObserver for NoObserver {
    fn on_event(&mut self, _: &StepEvent) {}
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValSummary {
    pub acc: f64,
    pub mp: f64,
    pub mr: f64,
    pub f1: f64,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: &'static str,
    pub step: usize,
    pub loss_p: f64,
    pub loss_c: f64,
    pub loss_m: f64,
    pub loss: f64,
    /// Validation metrics per task; absent during warm-up.
    pub val: Option<std::collections::BTreeMap<&'static str, ValSummary>>,
    pub val_mean_f1: Option<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    pub mode: Parallelism,
    /// Stops once validation accuracy reaches this value on every task.
    pub stop_at_accuracy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best state by validation mean macro-F1, or the last one without a
    /// validation set.
    pub best: ModelState,
    pub best_metric: Option<f64>,
    pub best_epoch: Option<usize>,
    /// Optimizer steps taken.
    pub steps: usize,
    pub log: Vec<EpochRecord>,
}

fn summarize(r: &MetricsReport) -> std::collections::BTreeMap<&'static str, ValSummary> {
    Task::ALL
        .iter()
        .map(|&t| {
            let m = r.task(t);
            (
                t.name(),
                ValSummary {
                    acc: m.acc,
                    mp: m.mp,
                    mr: m.mr,
                    f1: m.f1,
                },
            )
        })
        .collect()
}

struct Loop<'a> {
    cfg: &'a TrainConfig,
    train: &'a [Example],
    opts: &'a TrainOptions,
    weights: LossWeights,
    adam: Adam,
    rng: ChaCha8Rng,
    step: usize,
}

impl Loop<'_> {
    /// Runs one pass over the shuffled training set.
    fn epoch(&mut self, state: &mut ModelState, phase: Phase, obs: &mut dyn StepObserver) -> Result<LossParts> {
        let mut order: Vec<usize> = (0..self.train.len()).collect();
        order.shuffle(&mut self.rng);
        let mut sum = LossParts::default();
        for idx in order.chunks(self.cfg.batch_size) {
            let batch: Vec<Example> = idx.iter().map(|&i| self.train[i].clone()).collect();
            obs.on_event(&StepEvent::Forward { step: self.step, phase });
            let mut bg = batch_gradients(state, &batch, phase, self.weights, self.opts.mode)?;
            if !bg.loss.is_finite() || !bg.grads.is_finite() {
                return Err(Error::Diverged {
                    step: self.step,
                    message: format!("non-finite loss {:.6e} or gradient", bg.loss.total),
                });
            }
            bg.grads.clip_global_norm(self.cfg.grad_clip);
            self.adam.step(&mut state.store, &bg.grads);
            obs.on_event(&StepEvent::OptimizerStep { step: self.step });
            if phase == Phase::Main {
                for k in 0..state.memories.len() {
                    let task = state.memories[k].task;
                    let w = state.store.get(state.classifier_for(task).w).clone();
                    momentum_update(&mut state.memories[k], &w, self.cfg.lambda_momentum)?;
                    obs.on_event(&StepEvent::MomentumUpdate { step: self.step, task });
                }
            }
            self.step += 1;
            sum += bg.loss.scaled(batch.len() as f64);
        }
        Ok(sum.scaled(1.0 / self.train.len() as f64))
    }
}

fn record(epoch: usize, phase: &'static str, step: usize, l: LossParts) -> EpochRecord {
    EpochRecord {
        epoch,
        phase,
        step,
        loss_p: l.prediction,
        loss_c: l.community,
        loss_m: l.memory,
        loss: l.total,
        val: None,
        val_mean_f1: None,
    }
}

/// Trains `state` on `train`, selecting the best main-phase epoch on
/// `validation`. `on_epoch` sees each log record as it is produced.
pub fn train(
    mut state: ModelState,
    cfg: &TrainConfig,
    train: &[Example],
    validation: &[Example],
    opts: &TrainOptions,
    observer: &mut dyn StepObserver,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let c = &state.config;
    let freqs = TrainFrequencies::from_examples(train, c.num_laws, c.num_charges);
    let mut lp = Loop {
        cfg,
        train,
        opts,
        weights: LossWeights {
            lambda_c: cfg.lambda_c,
            lambda_m: cfg.lambda_m,
        },
        adam: Adam::new(cfg.lr, state.store.len()),
        rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_5eed),
        step: 0,
    };
    let mut log = Vec::new();

    for epoch in 0..cfg.warmup_epochs {
        let l = lp.epoch(&mut state, Phase::Warmup, observer)?;
        let r = record(epoch, "warmup", lp.step, l);
        log::info!("warmup epoch {epoch}: loss {:.4}", l.total);
        on_epoch(&r);
        log.push(r);
    }
    let warmup_steps = lp.step;
    for k in 0..state.memories.len() {
        let task = state.memories[k].task;
        let w = state.store.get(state.classifier_for(task).w).clone();
        warmup_init(&mut state.memories[k], &w, lp.step, warmup_steps)?;
        observer.on_event(&StepEvent::MemoryInit { step: lp.step, task });
    }

    let validate = |s: &ModelState| -> Result<Option<MetricsReport>> {
        if validation.is_empty() {
            return Ok(None);
        }
        evaluate(s, validation, &freqs, cfg.tail_threshold, opts.mode).map(Some)
    };

    let mut best = state.clone();
    let mut best_metric = validate(&state)?.map(|r| r.mean_f1());
    let mut best_epoch = None;
    for e in 0..cfg.epochs {
        let epoch = cfg.warmup_epochs + e;
        let l = lp.epoch(&mut state, Phase::Main, observer)?;
        let mut r = record(epoch, "main", lp.step, l);
        let report = validate(&state)?;
        let metric = report.as_ref().map(MetricsReport::mean_f1);
        if let Some(rep) = &report {
            r.val = Some(summarize(rep));
            r.val_mean_f1 = metric;
        }
        log::info!("epoch {epoch}: loss {:.4} val f1 {:?}", l.total, metric);
        on_epoch(&r);
        log.push(r);
        let improved = match (metric, best_metric, best_epoch) {
            (None, _, _) => true,
            (Some(_), _, None) => true,
            (Some(m), Some(b), Some(_)) => m > b,
            (Some(_), None, Some(_)) => true,
        };
        if improved {
            best = state.clone();
            best_metric = metric;
            best_epoch = Some(epoch);
        }
        if let (Some(target), Some(rep)) = (opts.stop_at_accuracy, &report) {
            if Task::ALL.iter().all(|&t| rep.task(t).acc >= target) {
                break;
            }
        }
    }
    Ok(TrainOutcome {
        best,
        best_metric,
        best_epoch,
        steps: lp.step,
        log,
    })
}
