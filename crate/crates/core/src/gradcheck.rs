//! Central finite-difference oracle for verifying tape gradients.
//!
//! The oracle only ever evaluates forward values; it never touches the
//! backward pass it is checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::Result;
use crate::params::{Grads, ParamId, ParamStore};
use crate::tensor::Tensor;

pub const STEP: f64 = 1e-6;

#[derive(Clone, Copy, Debug)]
pub struct Tolerance {
    /// Maximum relative error `|a - n| / max(|a|, |n|, floor)`.
    pub rel: f64,
    /// Magnitude below which the error is measured absolutely.
    pub floor: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            rel: 1e-4,
            floor: 1e-5,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Mismatch {
    pub name: String,
    pub entry: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct Report {
    pub entries: Vec<Mismatch>,
    floor: f64,
}

impl Default for Report {
    fn default() -> Self {
        Report {
            entries: Vec::new(),
            floor: Tolerance::default().floor,
        }
    }
}

impl Report {
    fn rel_err(&self, m: &Mismatch) -> f64 {
        let denom = m.analytic.abs().max(m.numeric.abs()).max(self.floor);
        (m.analytic - m.numeric).abs() / denom
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries
            .iter()
            .map(|m| self.rel_err(m))
            .fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.entries.len()
    }

    /// Entry with the largest relative error, for diagnostics.
    pub fn worst(&self) -> Option<&Mismatch> {
        self.entries
            .iter()
            .max_by(|a, b| self.rel_err(a).total_cmp(&self.rel_err(b)))
    }

    pub fn passes(&self, tol: Tolerance) -> bool {
        self.with_floor(tol).max_rel_error() <= tol.rel
    }

    fn with_floor(&self, tol: Tolerance) -> Report {
        Report {
            entries: self.entries.clone(),
            floor: tol.floor,
        }
    }

    pub fn assert_within(&self, tol: Tolerance) {
        let r = self.with_floor(tol);
        assert!(r.checked() > 0, "gradient check compared no entries");
        let err = r.max_rel_error();
        assert!(
            err <= tol.rel,
            "gradient mismatch {err:.3e} > {:.1e}; worst {:?}",
            tol.rel,
            r.worst()
        );
    }
}

/// Random projection weights turning a tensor output into a scalar.
fn projection(shape: (usize, usize), seed: u64) -> Tensor {
    if shape == (1, 1) {
        return Tensor::scalar(1.0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    Tensor::uniform(shape.0, shape.1, 1.0, &mut rng)
}

fn project(out: &Tensor, r: &Tensor) -> f64 {
    crate::tensor::dot(out.data(), r.data())
}

/// Checks gradients with respect to explicit input tensors and to every
/// parameter of `store` that the computation touches.
pub fn check_inputs<F>(store: &ParamStore, inputs: &[Tensor], seed: u64, build: F) -> Result<Report>
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Result<Var>,
{
    let eval = |store: &ParamStore, inputs: &[Tensor]| -> Result<Tensor> {
        let mut g = Graph::new(store);
        let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok(g.value(out).clone())
    };

    let mut g = Graph::new(store);
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let r = projection(g.shape(out), seed);
    let back = g.backward_with(vec![(out, r.clone())]);

    let mut report = Report::default();
    for (k, x) in inputs.iter().enumerate() {
        let analytic = back
            .grad(vars[k])
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(x.rows(), x.cols()));
        for e in 0..x.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[e] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[e] -= STEP;
            let numeric =
                (project(&eval(store, &plus)?, &r) - project(&eval(store, &minus)?, &r)) / (2.0 * STEP);
            report.entries.push(Mismatch {
                name: format!("input{k}"),
                entry: e,
                analytic: analytic.data()[e],
                numeric,
            });
        }
    }
    let param_report = compare_params(store, back.params(), None, seed, |s| {
        Ok(project(&eval(s, inputs)?, &r))
    })?;
    report.entries.extend(param_report.entries);
    Ok(report)
}

/// Checks a graph-built scalar (or projected tensor) against finite
/// differences over every touched parameter.
pub fn check_params<F>(store: &ParamStore, seed: u64, build: F) -> Result<Report>
where
    F: Fn(&mut Graph<'_>) -> Result<Var>,
{
    check_inputs(store, &[], seed, |g, _| build(g))
}

/// Compares `analytic` gradients to central differences of `eval` over
/// parameters. With `max_entries = Some(n)`, at most `n` randomly chosen
/// entries per parameter are perturbed.
pub fn compare_params<F>(
    store: &ParamStore,
    analytic: &Grads,
    max_entries: Option<usize>,
    seed: u64,
    eval: F,
) -> Result<Report>
where
    F: Fn(&ParamStore) -> Result<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = Report::default();
    let mut work = store.clone();
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        let len = store.get(id).len();
        let entries: Vec<usize> = match max_entries {
            Some(n) if n < len => sample(&mut rng, len, n).into_vec(),
            _ => (0..len).collect(),
        };
        let a = analytic.get_or_zero(id, store);
        for e in entries {
            let orig = work.get(id).data()[e];
            work.get_mut(id).data_mut()[e] = orig + STEP;
            let fp = eval(&work)?;
            work.get_mut(id).data_mut()[e] = orig - STEP;
            let fm = eval(&work)?;
            work.get_mut(id).data_mut()[e] = orig;
            report.entries.push(Mismatch {
                name: store.name(id).to_string(),
                entry: e,
                analytic: a.data()[e],
                numeric: (fp - fm) / (2.0 * STEP),
            });
        }
    }
    Ok(report)
}
