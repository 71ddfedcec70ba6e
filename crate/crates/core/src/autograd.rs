//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] borrows a [`ParamStore`] for the duration of one forward
//! pass. Parameters enter the tape by reference (no copies); every other
//! node owns its value. [`Graph::backward`] walks the tape in reverse and
//! returns parameter gradients plus gradients for any leaf created with
//! [`Graph::input`].

use crate::error::{Error, Result};
use crate::params::{Grads, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Val<'p> {
    Own(Tensor),
    Ref(&'p Tensor),
}

impl Val<'_> {
    #[inline]
    fn get(&self) -> &Tensor {
        match self {
            Val::Own(t) => t,
            Val::Ref(t) => t,
        }
    }
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Affine(Var, f64),
    MulScalar(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    GatherRow(Var, usize),
    StackCols(Vec<Var>),
    Transpose(Var),
    Softmax(Var),
    Normalize(Var, f64),
    NormalizeCols(Var, Vec<f64>),
    SelectCols(Var, Vec<usize>),
    Sum(Var),
    CrossEntropy(Var, usize, Vec<f64>),
}

struct Node<'p> {
    value: Val<'p>,
    op: Op,
}

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node<'p>>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::with_capacity(1024),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value: Val::Own(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    #[inline]
    pub fn value(&self, v: Var) -> &Tensor {
        self.nodes[v.0].value.get()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    /// Parameter leaf; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.index()] {
            return v;
        }
        self.nodes.push(Node {
            value: Val::Ref(self.store.get(id)),
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.index()] = Some(v);
        v
    }

    /// Leaf whose gradient is reported by [`Backward::grad`].
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Leaf that is not expected to receive a gradient. Identical to
    /// [`Graph::input`] on the tape; the distinction is documentary.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Copies the value of `v` into a fresh leaf; gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let t = self.value(a).matmul(self.value(b));
        self.push(t, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(t, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let t = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(t, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(t, Op::Mul(a, b))
    }

    /// `c * a + d` for constants `c`, `d`.
    pub fn affine(&mut self, a: Var, c: f64, d: f64) -> Var {
        let t = self.value(a).map(|x| c * x + d);
        self.push(t, Op::Affine(a, c))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.affine(a, c, 0.0)
    }

    /// Multiplies every entry of `a` by the 1x1 node `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        assert_eq!(self.shape(s), (1, 1), "mul_scalar expects a 1x1 scale");
        let c = self.value(s).get(0, 0);
        let t = self.value(a).scaled(c);
        self.push(t, Op::MulScalar(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.value(a).map(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(t, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = self.value(a).map(f64::exp);
        self.push(t, Op::Exp(a))
    }

    /// Stacks tensors with equal column counts vertically.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat of nothing");
        let cols = self.value(parts[0]).cols();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols(), cols, "concat column mismatch");
            rows += t.rows();
            data.extend_from_slice(t.data());
        }
        self.push(Tensor::from_vec(rows, cols, data), Op::Concat(parts.to_vec()))
    }

    /// Rows `start..start + len` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let src = self.value(a);
        assert!(start + len <= src.rows(), "slice out of range");
        let cols = src.cols();
        let data = src.data()[start * cols..(start + len) * cols].to_vec();
        self.push(Tensor::from_vec(len, cols, data), Op::Slice(a, start))
    }

    /// Row `r` of matrix `a` as a column vector.
    pub fn gather_row(&mut self, a: Var, r: usize) -> Var {
        let t = Tensor::vector(self.value(a).row(r).to_vec());
        self.push(t, Op::GatherRow(a, r))
    }

    /// Places column vectors side by side (`d x n`).
    pub fn stack_cols(&mut self, cols: &[Var]) -> Var {
        assert!(!cols.is_empty(), "stack_cols of nothing");
        let d = self.value(cols[0]).rows();
        let n = cols.len();
        let mut out = Tensor::zeros(d, n);
        for (j, &c) in cols.iter().enumerate() {
            let v = self.value(c);
            assert_eq!(v.shape(), (d, 1), "stack_cols expects equal-length column vectors");
            for i in 0..d {
                out.set(i, j, v.get(i, 0));
            }
        }
        self.push(out, Op::StackCols(cols.to_vec()))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let t = self.value(a).transpose();
        self.push(t, Op::Transpose(a))
    }

    /// Softmax over all entries of `a`.
    pub fn softmax(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let p = crate::tensor::softmax(src.data());
        let t = Tensor::from_vec(src.rows(), src.cols(), p);
        self.push(t, Op::Softmax(a))
    }

    /// `a / ‖a‖` over all entries.
    pub fn normalize(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        let n = src.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroNorm("normalize".into()));
        }
        let t = src.scaled(1.0 / n);
        Ok(self.push(t, Op::Normalize(a, n)))
    }

    /// Divides each column by its L2 norm.
    pub fn normalize_cols(&mut self, a: Var) -> Result<Var> {
        let src = self.value(a);
        let (r, c) = src.shape();
        let mut norms = vec![0.0; c];
        for i in 0..r {
            for (j, n) in norms.iter_mut().enumerate() {
                let x = src.get(i, j);
                *n += x * x;
            }
        }
        for (j, n) in norms.iter_mut().enumerate() {
            *n = n.sqrt();
            if *n == 0.0 {
                return Err(Error::ZeroNorm(format!("column {j}")));
            }
        }
        let mut out = src.clone();
        for i in 0..r {
            for (j, n) in norms.iter().enumerate() {
                out.set(i, j, src.get(i, j) / n);
            }
        }
        Ok(self.push(out, Op::NormalizeCols(a, norms)))
    }

    /// Row-wise maximum over the columns of `a` (`d x n -> d x 1`).
    /// Ties resolve to the lowest column index.
    pub fn max_cols(&mut self, a: Var) -> Var {
        self.select_cols(a, |x, best| x > best)
    }

    /// Row-wise minimum over the columns of `a`.
    pub fn min_cols(&mut self, a: Var) -> Var {
        self.select_cols(a, |x, best| x < best)
    }

    fn select_cols(&mut self, a: Var, better: impl Fn(f64, f64) -> bool) -> Var {
        let src = self.value(a);
        let (r, c) = src.shape();
        assert!(c > 0, "pool over zero columns");
        let mut idx = vec![0; r];
        let mut out = Vec::with_capacity(r);
        for (i, slot) in idx.iter_mut().enumerate() {
            let row = src.row(i);
            let mut best = 0;
            for j in 1..c {
                if better(row[j], row[best]) {
                    best = j;
                }
            }
            *slot = best;
            out.push(row[best]);
        }
        self.push(Tensor::vector(out), Op::SelectCols(a, idx))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// `-log softmax(logits)[target]` as a 1x1 node.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Var {
        let z = self.value(logits);
        assert!(target < z.len(), "target {target} out of range {}", z.len());
        let p = crate::tensor::softmax(z.data());
        let max = z.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + z.data().iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        let loss = lse - z.data()[target];
        self.push(Tensor::scalar(loss), Op::CrossEntropy(logits, target, p))
    }

    // Composite helpers.

    pub fn linear(&mut self, w: Var, x: Var, b: Var) -> Var {
        let wx = self.matmul(w, x);
        self.add(wx, b)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let at = self.transpose(a);
        self.matmul(at, b)
    }

    /// `Σ_j weights[j] · columns[j]`.
    pub fn weighted_sum(&mut self, columns: &[Var], weights: Var) -> Var {
        let stacked = self.stack_cols(columns);
        self.matmul(stacked, weights)
    }

    pub fn add_many(&mut self, terms: &[Var]) -> Var {
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = self.add(acc, t);
        }
        acc
    }

    /// Backpropagates from a scalar root with seed 1.
    pub fn backward(&self, root: Var) -> Backward {
        assert_eq!(self.shape(root), (1, 1), "backward root must be scalar");
        self.backward_with(vec![(root, Tensor::scalar(1.0))])
    }

    /// Backpropagates from arbitrary upstream gradients.
    pub fn backward_with(&self, seeds: Vec<(Var, Tensor)>) -> Backward {
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(self.nodes.len(), || None);
        let mut start = 0;
        for (v, g) in seeds {
            assert_eq!(g.shape(), self.shape(v), "seed shape mismatch");
            start = start.max(v.0 + 1);
            accumulate(&mut grads[v.0], g);
        }
        let mut params = Grads::new(self.store.len());

        for idx in (0..start).rev() {
            let node = &self.nodes[idx];
            let g = match &node.op {
                Op::Leaf => continue,
                Op::Param(id) => {
                    if let Some(g) = grads[idx].take() {
                        params.accumulate_owned(*id, g);
                    }
                    continue;
                }
                _ => match grads[idx].take() {
                    Some(g) => g,
                    None => continue,
                },
            };
            let y = node.value.get();
            match &node.op {
                Op::Leaf | Op::Param(_) => unreachable!(),
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[b.0], g.clone());
                    accumulate(&mut grads[a.0], g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[b.0], g.scaled(-1.0));
                    accumulate(&mut grads[a.0], g);
                }
                Op::Mul(a, b) => {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y);
                    let gb = g.zip_map(self.value(*a), |x, y| x * y);
                    accumulate(&mut grads[a.0], ga);
                    accumulate(&mut grads[b.0], gb);
                }
                Op::Affine(a, c) => accumulate(&mut grads[a.0], g.scaled(*c)),
                Op::MulScalar(a, s) => {
                    let c = self.value(*s).get(0, 0);
                    let gs: f64 = crate::tensor::dot(g.data(), self.value(*a).data());
                    accumulate(&mut grads[s.0], Tensor::scalar(gs));
                    accumulate(&mut grads[a.0], g.scaled(c));
                }
                Op::Tanh(a) => accumulate(&mut grads[a.0], g.zip_map(y, |g, y| g * (1.0 - y * y))),
                Op::Sigmoid(a) => {
                    accumulate(&mut grads[a.0], g.zip_map(y, |g, y| g * y * (1.0 - y)))
                }
                Op::Exp(a) => accumulate(&mut grads[a.0], g.zip_map(y, |g, y| g * y)),
                Op::Concat(parts) => {
                    let cols = g.cols();
                    let mut offset = 0;
                    for p in parts {
                        let r = self.value(*p).rows();
                        let part = g.data()[offset * cols..(offset + r) * cols].to_vec();
                        accumulate(&mut grads[p.0], Tensor::from_vec(r, cols, part));
                        offset += r;
                    }
                }
                Op::Slice(a, start) => {
                    let (r, c) = self.shape(*a);
                    let slot = grads[a.0].get_or_insert_with(|| Tensor::zeros(r, c));
                    let dst = &mut slot.data_mut()[start * c..start * c + g.len()];
                    for (d, s) in dst.iter_mut().zip(g.data()) {
                        *d += s;
                    }
                }
                Op::GatherRow(a, row) => {
                    let (r, c) = self.shape(*a);
                    let slot = grads[a.0].get_or_insert_with(|| Tensor::zeros(r, c));
                    for (d, s) in slot.row_mut(*row).iter_mut().zip(g.data()) {
                        *d += s;
                    }
                }
                Op::StackCols(cols) => {
                    for (j, c) in cols.iter().enumerate() {
                        accumulate(&mut grads[c.0], Tensor::vector(g.column(j)));
                    }
                }
                Op::Transpose(a) => accumulate(&mut grads[a.0], g.transpose()),
                Op::Softmax(a) => {
                    let gy = crate::tensor::dot(g.data(), y.data());
                    accumulate(&mut grads[a.0], y.zip_map(&g, |y, g| y * (g - gy)));
                }
                Op::Normalize(a, n) => {
                    let gy = crate::tensor::dot(g.data(), y.data());
                    accumulate(&mut grads[a.0], g.zip_map(y, |g, y| (g - y * gy) / n));
                }
                Op::NormalizeCols(a, norms) => {
                    let (r, c) = y.shape();
                    let mut gy = vec![0.0; c];
                    for i in 0..r {
                        for (j, acc) in gy.iter_mut().enumerate() {
                            *acc += g.get(i, j) * y.get(i, j);
                        }
                    }
                    let mut ga = Tensor::zeros(r, c);
                    for i in 0..r {
                        for j in 0..c {
                            ga.set(i, j, (g.get(i, j) - y.get(i, j) * gy[j]) / norms[j]);
                        }
                    }
                    accumulate(&mut grads[a.0], ga);
                }
                Op::SelectCols(a, idx) => {
                    let (r, c) = self.shape(*a);
                    let slot = grads[a.0].get_or_insert_with(|| Tensor::zeros(r, c));
                    for (i, &j) in idx.iter().enumerate() {
                        let cur = slot.get(i, j);
                        slot.set(i, j, cur + g.get(i, 0));
                    }
                }
                Op::Sum(a) => {
                    let (r, c) = self.shape(*a);
                    let s = g.get(0, 0);
                    accumulate(&mut grads[a.0], Tensor::from_vec(r, c, vec![s; r * c]));
                }
                Op::CrossEntropy(z, target, p) => {
                    let s = g.get(0, 0);
                    let (r, c) = self.shape(*z);
                    let mut gz: Vec<f64> = p.iter().map(|p| p * s).collect();
                    gz[*target] -= s;
                    accumulate(&mut grads[z.0], Tensor::from_vec(r, c, gz));
                }
            }
        }

        // Only leaf gradients survive; intermediate slots were consumed.
        Backward {
            leaf_grads: grads,
            params,
        }
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(t) => t.add_assign(&g),
        None => *slot = Some(g),
    }
}

pub struct Backward {
    leaf_grads: Vec<Option<Tensor>>,
    params: Grads,
}

impl Backward {
    /// Gradient reaching an input leaf, if any flowed there.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads[v.0].as_ref()
    }

    pub fn params(&self) -> &Grads {
        &self.params
    }

    pub fn into_params(self) -> Grads {
        self.params
    }
}
