//! Classification metrics, tail and frequency strata, and ablation
//! reporting.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Ablation, Example, ModelState, Prediction, Task};
use crate::parallel::Parallelism;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub acc: f64,
    pub mp: f64,
    pub mr: f64,
    pub f1: f64,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Metrics over the instances whose gold label is in `classes`, with macro
/// averages over `classes`. `None` when nothing is left to score.
fn restricted_metrics(preds: &[usize], golds: &[usize], classes: &[usize]) -> Option<TaskMetrics> {
    if classes.is_empty() {
        return None;
    }
    let max = classes.iter().copied().max().unwrap_or(0);
    let mut in_set = vec![false; max + 1];
    for &c in classes {
        in_set[c] = true;
    }
    let member = |c: usize| c <= max && in_set[c];
    let pairs: Vec<(usize, usize)> = preds
        .iter()
        .zip(golds)
        .filter(|(_, &g)| member(g))
        .map(|(&p, &g)| (p, g))
        .collect();
    if pairs.is_empty() {
        return None;
    }
    let correct = pairs.iter().filter(|(p, g)| p == g).count();
    let per_class: Vec<ClassMetrics> = classes
        .iter()
        .map(|&c| {
            let tp = pairs.iter().filter(|&&(p, g)| p == c && g == c).count();
            let predicted = pairs.iter().filter(|&&(p, _)| p == c).count();
            let support = pairs.iter().filter(|&&(_, g)| g == c).count();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            ClassMetrics {
                precision,
                recall,
                f1: harmonic(precision, recall),
                support,
            }
        })
        .collect();
    let n = per_class.len() as f64;
    Some(TaskMetrics {
        acc: ratio(correct, pairs.len()),
        mp: per_class.iter().map(|c| c.precision).sum::<f64>() / n,
        mr: per_class.iter().map(|c| c.recall).sum::<f64>() / n,
        f1: per_class.iter().map(|c| c.f1).sum::<f64>() / n,
        per_class,
    })
}

/// Accuracy and per-class precision, recall and F1 with macro averages over
/// all `num_classes` classes (absent classes score 0).
pub fn compute_metrics(preds: &[usize], golds: &[usize], num_classes: usize) -> Result<TaskMetrics> {
    if preds.is_empty() {
        return Err(Error::Empty("no predictions to score".into()));
    }
    if preds.len() != golds.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} gold labels",
            preds.len(),
            golds.len()
        )));
    }
    if let Some(&bad) = preds.iter().chain(golds).find(|&&x| x >= num_classes) {
        return Err(Error::Shape(format!("label {bad} out of range {num_classes}")));
    }
    let classes: Vec<usize> = (0..num_classes).collect();
    restricted_metrics(preds, golds, &classes).ok_or_else(|| Error::Empty("no classes".into()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum StrataSpec {
    /// Classes with fewer than `threshold` training cases.
    TailByCount { threshold: usize },
    FrequencyTerciles,
}

/// Stratum name and member classes.
pub fn strata(spec: &StrataSpec, train_frequencies: &[usize]) -> Vec<(String, Vec<usize>)> {
    match spec {
        StrataSpec::TailByCount { threshold } => {
            let tail = (0..train_frequencies.len())
                .filter(|&c| train_frequencies[c] < *threshold)
                .collect();
            vec![("tail".to_string(), tail)]
        }
        StrataSpec::FrequencyTerciles => {
            let mut order: Vec<usize> = (0..train_frequencies.len()).collect();
            order.sort_by(|&a, &b| train_frequencies[b].cmp(&train_frequencies[a]).then(a.cmp(&b)));
            let n = order.len();
            let base = n / 3;
            let sizes = match n % 3 {
                0 => [base, base, base],
                1 => [base, base + 1, base],
                _ => [base + 1, base + 1, base],
            };
            let mut out = Vec::new();
            let mut start = 0;
            for (name, size) in ["high", "medium", "low"].into_iter().zip(sizes) {
                out.push((name.to_string(), order[start..start + size].to_vec()));
                start += size;
            }
            out
        }
    }
}

/// Metrics per stratum; strata without classes or instances are `None`.
pub fn stratified_eval(
    preds: &[usize],
    golds: &[usize],
    spec: &StrataSpec,
    train_frequencies: &[usize],
) -> BTreeMap<String, Option<TaskMetrics>> {
    strata(spec, train_frequencies)
        .into_iter()
        .map(|(name, classes)| (name, restricted_metrics(preds, golds, &classes)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub law: TaskMetrics,
    pub charge: TaskMetrics,
    pub penalty: TaskMetrics,
    /// Task name to stratum name to metrics (null when empty).
    pub strata: BTreeMap<String, BTreeMap<String, Option<TaskMetrics>>>,
}

impl MetricsReport {
    pub fn task(&self, task: Task) -> &TaskMetrics {
        match task {
            Task::Law => &self.law,
            Task::Charge => &self.charge,
            Task::Penalty => &self.penalty,
        }
    }

    /// Mean macro-F1 over the three subtasks.
    pub fn mean_f1(&self) -> f64 {
        (self.law.f1 + self.charge.f1 + self.penalty.f1) / 3.0
    }

    pub fn stratum(&self, task: Task, name: &str) -> Option<&TaskMetrics> {
        self.strata.get(task.name())?.get(name)?.as_ref()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Training-split frequencies used to assign strata.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainFrequencies {
    pub law: Vec<usize>,
    pub charge: Vec<usize>,
}

impl TrainFrequencies {
    pub fn from_examples(examples: &[Example], num_laws: usize, num_charges: usize) -> Self {
        let mut law = vec![0; num_laws];
        let mut charge = vec![0; num_charges];
        for e in examples {
            law[e.law] += 1;
            charge[e.charge] += 1;
        }
        TrainFrequencies { law, charge }
    }
}

/// Builds the full report from predictions. Law and charge get both the
/// tail stratum and the frequency terciles.
pub fn build_report(
    predictions: &[Prediction],
    examples: &[Example],
    num_classes: [usize; 3],
    frequencies: &TrainFrequencies,
    tail_threshold: usize,
) -> Result<MetricsReport> {
    let mut tasks = Vec::with_capacity(3);
    let mut strata_out = BTreeMap::new();
    for task in Task::ALL {
        let preds: Vec<usize> = predictions.iter().map(|p| p.argmax(task)).collect();
        let golds: Vec<usize> = examples.iter().map(|e| e.target(task)).collect();
        tasks.push(compute_metrics(&preds, &golds, num_classes[task.index()])?);
        let freq = match task {
            Task::Law => &frequencies.law,
            Task::Charge => &frequencies.charge,
            Task::Penalty => continue,
        };
        let mut s = stratified_eval(&preds, &golds, &StrataSpec::TailByCount { threshold: tail_threshold }, freq);
        s.extend(stratified_eval(&preds, &golds, &StrataSpec::FrequencyTerciles, freq));
        strata_out.insert(task.name().to_string(), s);
    }
    let mut it = tasks.into_iter();
    Ok(MetricsReport {
        law: it.next().unwrap(),
        charge: it.next().unwrap(),
        penalty: it.next().unwrap(),
        strata: strata_out,
    })
}

/// Predicts `examples` with `state` and scores them.
pub fn evaluate(
    state: &ModelState,
    examples: &[Example],
    frequencies: &TrainFrequencies,
    tail_threshold: usize,
    mode: Parallelism,
) -> Result<MetricsReport> {
    let facts: Vec<_> = examples.iter().map(|e| e.fact.clone()).collect();
    let preds = state.predict(&facts, mode)?;
    let c = &state.config;
    build_report(
        &preds,
        examples,
        [c.num_laws, c.num_charges, c.num_penalties],
        frequencies,
        tail_threshold,
    )
}

/// Side-by-side table: one row per variant, acc/mp/mr/f1 per task and the
/// law tail macro-F1.
pub fn ablation_csv(rows: &[(Ablation, MetricsReport)]) -> String {
    let mut out = String::from("variant");
    for task in Task::ALL {
        for m in ["acc", "mp", "mr", "f1"] {
            let _ = write!(out, ",{}_{m}", task.name());
        }
    }
    out.push_str(",law_tail_f1\n");
    for (variant, r) in rows {
        out.push_str(variant.name());
        for task in Task::ALL {
            let t = r.task(task);
            for v in [t.acc, t.mp, t.mr, t.f1] {
                let _ = write!(out, ",{v:.6}");
            }
        }
        match r.stratum(Task::Law, "tail") {
            Some(t) => {
                let _ = write!(out, ",{:.6}", t.f1);
            }
            None => out.push(','),
        }
        out.push('\n');
    }
    out
}
