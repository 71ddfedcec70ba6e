//! Revised memory: one row per label, a fully connected cosine graph over
//! the rows, weighted graph distillation into revised distinction vectors,
//! and matching of a fact against the memory keys.
//!
//! Memory rows never receive gradients. They enter every graph as
//! constants and change only through the momentum rule in training.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::law_distill::{gdo_layer, gdo_stack, GdoLayer, GdoParams, NeighborWeights};
use crate::params::{glorot, ParamId, ParamStore};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MemoryTask {
    Law,
    Charge,
}

impl MemoryTask {
    pub fn name(self) -> &'static str {
        match self {
            MemoryTask::Law => "law",
            MemoryTask::Charge => "charge",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RevisedMemory {
    pub task: MemoryTask,
    /// `n_labels x d` memory matrix; row `i` belongs to label `i`.
    pub rows: Tensor,
    pub initialized: bool,
}

impl RevisedMemory {
    pub fn uninitialized(task: MemoryTask, n_labels: usize, dim: usize) -> Self {
        RevisedMemory {
            task,
            rows: Tensor::zeros(n_labels, dim),
            initialized: false,
        }
    }

    pub fn num_labels(&self) -> usize {
        self.rows.rows()
    }

    pub fn dim(&self) -> usize {
        self.rows.cols()
    }

    /// Key vectors are the current memory rows.
    pub fn keys(&self) -> &Tensor {
        &self.rows
    }

    fn require_initialized(&self) -> Result<()> {
        if self.initialized {
            Ok(())
        } else {
            Err(Error::Memory(format!("{} memory used before initialization", self.task.name())))
        }
    }
}

/// Pairwise cosine similarities between memory rows (diagonal included).
pub fn memory_similarity(mem: &RevisedMemory) -> Result<Tensor> {
    mem.require_initialized()?;
    let n = mem.num_labels();
    let norms: Vec<f64> = (0..n).map(|i| crate::tensor::dot(mem.rows.row(i), mem.rows.row(i)).sqrt()).collect();
    if let Some(i) = norms.iter().position(|&x| x == 0.0) {
        return Err(Error::ZeroNorm(format!("{} memory row for label {i} is zero", mem.task.name())));
    }
    let mut a = Tensor::zeros(n, n);
    for i in 0..n {
        a.set(i, i, 1.0);
        for j in (i + 1)..n {
            let c = crate::tensor::dot(mem.rows.row(i), mem.rows.row(j)) / (norms[i] * norms[j]);
            a.set(i, j, c);
            a.set(j, i, c);
        }
    }
    Ok(a)
}

/// `α_ij = exp(a_ij) / Σ_{j' ≠ i} exp(a_ij')` for `j ≠ i`; the diagonal is
/// never formed. A single node has no neighbors.
pub fn attention_weights(similarity: &Tensor) -> NeighborWeights {
    let n = similarity.rows();
    let mut weights = Tensor::zeros(n, n);
    let mut has_neighbors = vec![false; n];
    if n >= 2 {
        for i in 0..n {
            has_neighbors[i] = true;
            let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let scores: Vec<f64> = others.iter().map(|&j| similarity.get(i, j)).collect();
            for (&j, a) in others.iter().zip(crate::tensor::softmax(&scores)) {
                weights.set(i, j, a);
            }
        }
    }
    NeighborWeights { weights, has_neighbors }
}

/// `m_i' = Φ m_i − Σ_{j≠i} α_ij Ψ (m_i ⊕ m_j) + b` over column features.
pub fn weighted_gdo_layer(g: &mut Graph<'_>, m: Var, alpha: &NeighborWeights, layer: &GdoLayer) -> Result<Var> {
    gdo_layer(g, m, alpha, layer)
}

/// Revised distinction vectors `γ` (`d_H x n`, one column per label). The
/// similarity graph is taken on the stored rows for every layer.
pub fn distill_memory(g: &mut Graph<'_>, mem: &RevisedMemory, params: &GdoParams) -> Result<Var> {
    let alpha = attention_weights(&memory_similarity(mem)?);
    let m0 = g.constant(mem.rows.transpose());
    gdo_stack(g, m0, &alpha, params)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RevisedContextParams {
    /// `W_k`, `d x 2 d_s`.
    pub w_k: ParamId,
}

impl RevisedContextParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, d_mem: usize, d_s: usize) -> Self {
        RevisedContextParams {
            w_k: store.add(format!("{name}.w_k"), glorot(d_mem, 2 * d_s, rng)),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MemoryMatch {
    /// `S'` divided by the temperature, used by the memory loss.
    pub logits: Var,
    /// `Ŝ`.
    pub probs: Var,
    /// `γ̂`.
    pub gamma_hat: Var,
}

/// Row-normalized keys, computed once per step and shared across a batch.
pub fn normalized_keys(mem: &RevisedMemory) -> Result<Tensor> {
    mem.require_initialized()?;
    let mut k = mem.rows.clone();
    for i in 0..k.rows() {
        let n = crate::tensor::dot(k.row(i), k.row(i)).sqrt();
        if n == 0.0 {
            return Err(Error::ZeroNorm(format!("{} memory key for label {i} is zero", mem.task.name())));
        }
        k.row_mut(i).iter_mut().for_each(|x| *x /= n);
    }
    Ok(k)
}

/// `S'_i = cos(W_k (v_b ⊕ v_p), k_i)`, `Ŝ = softmax(S' / T)`,
/// `γ̂ = Σ_i Ŝ_i γ_i`.
pub fn match_memory(
    g: &mut Graph<'_>,
    v_b: Var,
    v_p: Var,
    keys: &Tensor,
    gamma: Var,
    params: &RevisedContextParams,
    temperature: f64,
) -> Result<MemoryMatch> {
    let w = g.param(params.w_k);
    let joint = g.concat(&[v_b, v_p]);
    if g.shape(w).1 != g.shape(joint).0 || g.shape(w).0 != keys.cols() || g.shape(gamma).1 != keys.rows() {
        return Err(Error::Shape(format!(
            "memory match: W_k {:?}, fact {:?}, keys {:?}, gamma {:?}",
            g.shape(w),
            g.shape(joint),
            keys.shape(),
            g.shape(gamma)
        )));
    }
    let q = g.matmul(w, joint);
    let q = g.normalize(q)?;
    let k = g.constant(keys.clone());
    let cos = g.matmul(k, q);
    let logits = if temperature == 1.0 {
        cos
    } else {
        g.scale(cos, 1.0 / temperature)
    };
    let probs = g.softmax(logits);
    let gamma_hat = g.matmul(gamma, probs);
    Ok(MemoryMatch {
        logits,
        probs,
        gamma_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_inputs, Tolerance};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn memory(rows: Tensor) -> RevisedMemory {
        RevisedMemory {
            task: MemoryTask::Law,
            rows,
            initialized: true,
        }
    }

    fn dense_weighted_layer(m: &Tensor, phi: &Tensor, psi: &Tensor, b: &Tensor) -> Tensor {
        // m is n x d (row per label); returns n x d_out.
        let n = m.rows();
        let mut out = Tensor::zeros(n, phi.rows());
        for i in 0..n {
            let mi = Tensor::vector(m.row(i).to_vec());
            let mut acc = phi.matmul(&mi);
            acc.add_assign(b);
            let denom: f64 = (0..n)
                .filter(|&j| j != i)
                .map(|j| crate::tensor::cosine(m.row(i), m.row(j)).unwrap().exp())
                .sum();
            for j in (0..n).filter(|&j| j != i) {
                let a = crate::tensor::cosine(m.row(i), m.row(j)).unwrap().exp() / denom;
                let mut pair = m.row(i).to_vec();
                pair.extend_from_slice(m.row(j));
                acc.sub_assign(&psi.matmul(&Tensor::vector(pair)).scaled(a));
            }
            out.row_mut(i).copy_from_slice(acc.data());
        }
        out
    }

    #[test]
    fn similarity_examples() {
        let same = memory(Tensor::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0], vec![1.0, 2.0]]));
        let a = memory_similarity(&same).unwrap();
        assert!(a.data().iter().all(|x| (x - 1.0).abs() < 1e-15));
        let ortho = memory(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 3.0]]));
        let a = memory_similarity(&ortho).unwrap();
        assert_eq!(a.get(0, 1), 0.0);
        assert_eq!(a.get(1, 0), 0.0);
    }

    #[test]
    fn similarity_matches_brute_force() {
        let rows = Tensor::uniform(3, 5, 1.0, &mut rng(3));
        let a = memory_similarity(&memory(rows.clone())).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let r = |k: usize| rows.row(k);
                let brute: f64 = r(i).iter().zip(r(j)).map(|(x, y)| x * y).sum::<f64>()
                    / (r(i).iter().map(|x| x * x).sum::<f64>().sqrt() * r(j).iter().map(|x| x * x).sum::<f64>().sqrt());
                assert!((a.get(i, j) - brute).abs() < 1e-14);
                assert_eq!(a.get(i, j), a.get(j, i));
            }
        }
    }

    #[test]
    fn zero_row_names_label() {
        let m = memory(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]));
        match memory_similarity(&m) {
            Err(Error::ZeroNorm(msg)) => assert!(msg.contains("label 1")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn uninitialized_memory_rejected() {
        let m = RevisedMemory::uninitialized(MemoryTask::Charge, 3, 2);
        assert!(matches!(memory_similarity(&m), Err(Error::Memory(_))));
        assert!(normalized_keys(&m).is_err());
    }

    #[test]
    fn alpha_rows_sum_to_one_without_self() {
        let rows = Tensor::uniform(6, 4, 1.0, &mut rng(5));
        let alpha = attention_weights(&memory_similarity(&memory(rows)).unwrap());
        for i in 0..6 {
            assert_eq!(alpha.weights.get(i, i), 0.0);
            let s: f64 = alpha.weights.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
        let two = attention_weights(&memory_similarity(&memory(Tensor::uniform(2, 3, 1.0, &mut rng(1)))).unwrap());
        assert_eq!(two.weights.get(0, 1), 1.0);
        assert_eq!(two.weights.get(1, 0), 1.0);
        let one = attention_weights(&Tensor::identity(1));
        assert_eq!(one.has_neighbors, vec![false]);
    }

    #[test]
    fn single_label_degenerates_to_affine() {
        let mut store = ParamStore::new();
        let p = GdoParams::new(&mut store, &mut rng(1), "mem", 2, 2, 1);
        *store.get_mut(p.layers[0].bias) = Tensor::vector(vec![0.1, -0.2]);
        let mem = memory(Tensor::from_rows(&[vec![0.5, 1.5]]));
        let mut g = Graph::new(&store);
        let gamma = distill_memory(&mut g, &mem, &p).unwrap();
        let mut expected = store.get(p.layers[0].phi).matmul(&Tensor::vector(vec![0.5, 1.5]));
        expected.add_assign(&Tensor::vector(vec![0.1, -0.2]));
        assert!(g.value(gamma).max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn identity_parameters_and_empty_stack() {
        let mut store = ParamStore::new();
        let p = GdoParams::new(&mut store, &mut rng(1), "mem", 3, 3, 1);
        *store.get_mut(p.layers[0].phi) = Tensor::identity(3);
        *store.get_mut(p.layers[0].psi) = Tensor::zeros(3, 6);
        let empty = GdoParams::new(&mut store, &mut rng(1), "none", 3, 3, 0);
        let rows = Tensor::uniform(4, 3, 1.0, &mut rng(2));
        let mem = memory(rows.clone());
        let mut g = Graph::new(&store);
        let a = distill_memory(&mut g, &mem, &p).unwrap();
        assert_eq!(g.value(a), &rows.transpose());
        let b = distill_memory(&mut g, &mem, &empty).unwrap();
        assert_eq!(g.value(b), &rows.transpose());
    }

    #[test]
    fn identical_memories_distill_to_nothing() {
        let mut store = ParamStore::new();
        let p = GdoParams::new(&mut store, &mut rng(3), "mem", 2, 2, 1);
        let psi = Tensor::uniform(2, 4, 1.0, &mut rng(5));
        let mut phi = Tensor::zeros(2, 2);
        for r in 0..2 {
            for c in 0..2 {
                phi.set(r, c, psi.get(r, c) + psi.get(r, c + 2));
            }
        }
        *store.get_mut(p.layers[0].phi) = phi;
        *store.get_mut(p.layers[0].psi) = psi;
        let mem = memory(Tensor::from_rows(&[vec![0.7, -0.1], vec![0.7, -0.1]]));
        let mut g = Graph::new(&store);
        let gamma = distill_memory(&mut g, &mem, &p).unwrap();
        assert!(g.value(gamma).data().iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn weighted_layer_matches_dense_oracle_and_fd() {
        for seed in 0..5 {
            let mut store = ParamStore::new();
            let p = GdoParams::new(&mut store, &mut rng(seed), "mem", 2, 2, 1);
            *store.get_mut(p.layers[0].bias) = Tensor::uniform(2, 1, 0.5, &mut rng(seed + 9));
            let rows = Tensor::uniform(3, 2, 1.0, &mut rng(seed + 1));
            let mem = memory(rows.clone());
            let mut g = Graph::new(&store);
            let gamma = distill_memory(&mut g, &mem, &p).unwrap();
            let l = &p.layers[0];
            let expected = dense_weighted_layer(&rows, store.get(l.phi), store.get(l.psi), store.get(l.bias));
            assert!(g.value(gamma).max_abs_diff(&expected.transpose()) < 1e-13);

            let alpha = attention_weights(&memory_similarity(&mem).unwrap());
            let report = check_inputs(&store, &[rows.transpose()], seed, |g, x| {
                weighted_gdo_layer(g, x[0], &alpha, l)
            })
            .unwrap();
            report.assert_within(Tolerance::default());
        }
    }

    #[test]
    fn two_layers_match_dense_oracle() {
        let mut store = ParamStore::new();
        let p = GdoParams::new(&mut store, &mut rng(11), "mem", 3, 3, 2);
        let rows = Tensor::uniform(4, 3, 1.0, &mut rng(12));
        let mem = memory(rows.clone());
        let mut g = Graph::new(&store);
        let gamma = distill_memory(&mut g, &mem, &p).unwrap();
        // Second layer still weights neighbors by layer-0 similarities.
        let alpha = attention_weights(&memory_similarity(&mem).unwrap());
        let l0 = &p.layers[0];
        let first = dense_weighted_layer(&rows, store.get(l0.phi), store.get(l0.psi), store.get(l0.bias));
        let l1 = &p.layers[1];
        let mut second = Tensor::zeros(4, 3);
        for i in 0..4 {
            let mut acc = store.get(l1.phi).matmul(&Tensor::vector(first.row(i).to_vec()));
            acc.add_assign(store.get(l1.bias));
            for j in (0..4).filter(|&j| j != i) {
                let mut pair = first.row(i).to_vec();
                pair.extend_from_slice(first.row(j));
                acc.sub_assign(&store.get(l1.psi).matmul(&Tensor::vector(pair)).scaled(alpha.weights.get(i, j)));
            }
            second.row_mut(i).copy_from_slice(acc.data());
        }
        assert!(g.value(gamma).max_abs_diff(&second.transpose()) < 1e-13);
    }

    #[test]
    fn memory_receives_no_gradient() {
        let mut store = ParamStore::new();
        let gdo = GdoParams::new(&mut store, &mut rng(1), "mem", 3, 2, 1);
        let ctx = RevisedContextParams::new(&mut store, &mut rng(2), "rev", 3, 3);
        let mem = memory(Tensor::uniform(4, 3, 1.0, &mut rng(3)));
        let keys = normalized_keys(&mem).unwrap();
        let mut g = Graph::new(&store);
        let gamma = distill_memory(&mut g, &mem, &gdo).unwrap();
        let vb = g.input(Tensor::uniform(3, 1, 1.0, &mut rng(4)));
        let vp = g.input(Tensor::uniform(3, 1, 1.0, &mut rng(5)));
        let mm = match_memory(&mut g, vb, vp, &keys, gamma, &ctx, 1.0).unwrap();
        let loss = g.sum(mm.gamma_hat);
        let back = g.backward(loss);
        // Memory is not a parameter and has no leaf in the graph.
        assert!(store.iter().all(|(_, name, _)| !name.contains("memory")));
        for id in gdo.ids().into_iter().chain([ctx.w_k]) {
            let grad = back.params().get(id).expect("parameter gradient");
            assert!(grad.norm() > 0.0, "{}", store.name(id));
        }
    }

    #[test]
    fn cosine_scale_invariance() {
        let rows = Tensor::uniform(4, 3, 1.0, &mut rng(7));
        let a = memory_similarity(&memory(rows.clone())).unwrap();
        let b = memory_similarity(&memory(rows.scaled(3.7))).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-14);
    }

    #[test]
    fn single_label_match() {
        let mut store = ParamStore::new();
        let ctx = RevisedContextParams::new(&mut store, &mut rng(2), "rev", 2, 2);
        let mem = memory(Tensor::from_rows(&[vec![1.0, 1.0]]));
        let keys = normalized_keys(&mem).unwrap();
        let mut g = Graph::new(&store);
        let gamma = g.input(Tensor::vector(vec![0.3, -0.3, 2.0]));
        let vb = g.input(Tensor::vector(vec![0.3, 0.5]));
        let vp = g.input(Tensor::vector(vec![-0.2, 0.1]));
        let mm = match_memory(&mut g, vb, vp, &keys, gamma, &ctx, 1.0).unwrap();
        assert_eq!(g.value(mm.probs).data(), &[1.0]);
        assert_eq!(g.value(mm.gamma_hat).data(), &[0.3, -0.3, 2.0]);
    }

    #[test]
    fn orthogonal_query_gives_uniform_match() {
        let mut store = ParamStore::new();
        let ctx = RevisedContextParams::new(&mut store, &mut rng(2), "rev", 3, 1);
        // W_k maps (v_b, v_p) onto the first axis only; keys live on axes 2, 3.
        *store.get_mut(ctx.w_k) = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0], vec![0.0, 0.0]]);
        let mem = memory(Tensor::from_rows(&[vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 2.0], vec![0.0, 1.0, 1.0]]));
        let keys = normalized_keys(&mem).unwrap();
        let gt = Tensor::uniform(2, 3, 1.0, &mut rng(1));
        let mut g = Graph::new(&store);
        let gamma = g.input(gt.clone());
        let vb = g.input(Tensor::vector(vec![0.8]));
        let vp = g.input(Tensor::vector(vec![0.4]));
        let mm = match_memory(&mut g, vb, vp, &keys, gamma, &ctx, 1.0).unwrap();
        for p in g.value(mm.probs).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        for r in 0..2 {
            let mean = gt.row(r).iter().sum::<f64>() / 3.0;
            assert!((g.value(mm.gamma_hat).data()[r] - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_query_rejected() {
        let mut store = ParamStore::new();
        let ctx = RevisedContextParams::new(&mut store, &mut rng(2), "rev", 2, 1);
        *store.get_mut(ctx.w_k) = Tensor::zeros(2, 2);
        let mem = memory(Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let keys = normalized_keys(&mem).unwrap();
        let mut g = Graph::new(&store);
        let gamma = g.input(Tensor::zeros(2, 2));
        let vb = g.input(Tensor::vector(vec![1.0]));
        let vp = g.input(Tensor::vector(vec![1.0]));
        assert!(matches!(
            match_memory(&mut g, vb, vp, &keys, gamma, &ctx, 1.0),
            Err(Error::ZeroNorm(_))
        ));
    }

    #[test]
    fn match_memory_gradients() {
        for seed in 0..5 {
            let mut store = ParamStore::new();
            let ctx = RevisedContextParams::new(&mut store, &mut rng(seed), "rev", 3, 2);
            let mem = memory(Tensor::uniform(4, 3, 1.0, &mut rng(seed + 1)));
            let keys = normalized_keys(&mem).unwrap();
            let mut r = rng(seed + 2);
            let inputs = [
                Tensor::uniform(2, 1, 1.0, &mut r),
                Tensor::uniform(2, 1, 1.0, &mut r),
                Tensor::uniform(2, 4, 1.0, &mut r),
            ];
            let report = check_inputs(&store, &inputs, seed, |g, x| {
                let mm = match_memory(g, x[0], x[1], &keys, x[2], &ctx, 0.5)?;
                Ok(g.concat(&[mm.gamma_hat, mm.logits]))
            })
            .unwrap();
            report.assert_within(Tolerance::default());
        }
    }
}
