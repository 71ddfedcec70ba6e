//! Law distillation: graph distillation operators over the prior article
//! graph, community max/min pooling and prior context selection.
//!
//! Node features are held column-wise (`d x m`, one column per node) so a
//! whole layer is a handful of matrix products.

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{glorot, ParamId, ParamStore};
use crate::prior_graph::CommunityPartition;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GdoLayer {
    /// `Φ`, `d_out x d_in`.
    pub phi: ParamId,
    /// `Ψ`, `d_out x 2 d_in`.
    pub psi: ParamId,
    /// `b`, `d_out x 1`.
    pub bias: ParamId,
    pub d_in: usize,
    pub d_out: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GdoParams {
    pub layers: Vec<GdoLayer>,
    /// Apply tanh between consecutive layers. Off by default.
    pub tanh_between: bool,
}

impl GdoParams {
    /// `layers` layers mapping `d_in` to `d_hidden` and then `d_hidden` to
    /// `d_hidden`.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d_in: usize,
        d_hidden: usize,
        layers: usize,
    ) -> Self {
        let mut out = Vec::with_capacity(layers);
        let mut d = d_in;
        for l in 0..layers {
            out.push(GdoLayer {
                phi: store.add(format!("{name}.{l}.phi"), glorot(d_hidden, d, rng)),
                psi: store.add(format!("{name}.{l}.psi"), glorot(d_hidden, 2 * d, rng)),
                bias: store.add(format!("{name}.{l}.b"), Tensor::zeros(d_hidden, 1)),
                d_in: d,
                d_out: d_hidden,
            });
            d = d_hidden;
        }
        GdoParams {
            layers: out,
            tanh_between: false,
        }
    }

    pub fn output_dim(&self, d_in: usize) -> usize {
        self.layers.last().map_or(d_in, |l| l.d_out)
    }

    pub fn ids(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.phi, l.psi, l.bias]).collect()
    }
}

/// Neighbor weights of a GDO layer: `weights[i][j]` is the weight of node
/// `j` in node `i`'s neighbor average (rows sum to 1, or are all zero for
/// nodes without neighbors).
#[derive(Clone, Debug, PartialEq)]
pub struct NeighborWeights {
    pub weights: Tensor,
    pub has_neighbors: Vec<bool>,
}

impl NeighborWeights {
    /// Uniform `1/|N_i|` weights over the retained prior-graph edges.
    pub fn from_partition(partition: &CommunityPartition) -> Self {
        let m = partition.num_articles();
        let mut weights = Tensor::zeros(m, m);
        let mut has_neighbors = vec![false; m];
        for (i, nbrs) in partition.neighbors.iter().enumerate() {
            if nbrs.is_empty() {
                continue;
            }
            has_neighbors[i] = true;
            let w = 1.0 / nbrs.len() as f64;
            for &j in nbrs {
                weights.set(i, j, w);
            }
        }
        NeighborWeights { weights, has_neighbors }
    }

    pub fn len(&self) -> usize {
        self.has_neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.has_neighbors.is_empty()
    }
}

/// One distillation layer over column features `v` (`d_in x m`):
///
/// `v_i' = Φ v_i − Σ_j w_ij Ψ (v_i ⊕ v_j) + b`, where the neighbor term
/// vanishes for nodes without neighbors.
pub fn gdo_layer(g: &mut Graph<'_>, v: Var, nbrs: &NeighborWeights, layer: &GdoLayer) -> Result<Var> {
    let (d, m) = g.shape(v);
    if d != layer.d_in || m != nbrs.len() {
        return Err(Error::Shape(format!(
            "GDO layer expects {} x {}, got {d} x {m}",
            layer.d_in,
            nbrs.len()
        )));
    }
    let phi = g.param(layer.phi);
    let psi = g.param(layer.psi);
    let b = g.param(layer.bias);
    let self_term = g.matmul(phi, v);
    let ones = g.constant(Tensor::from_vec(1, m, vec![1.0; m]));
    let bias = g.matmul(b, ones);
    let mut out = g.add(self_term, bias);
    if nbrs.has_neighbors.iter().any(|&h| h) {
        let own = if nbrs.has_neighbors.iter().all(|&h| h) {
            v
        } else {
            let mut mask = Tensor::zeros(m, m);
            for (i, &h) in nbrs.has_neighbors.iter().enumerate() {
                if h {
                    mask.set(i, i, 1.0);
                }
            }
            let mask = g.constant(mask);
            g.matmul(v, mask)
        };
        let wt = g.constant(nbrs.weights.transpose());
        let mixed = g.matmul(v, wt);
        let pairs = g.concat(&[own, mixed]);
        let nbr_term = g.matmul(psi, pairs);
        out = g.sub(out, nbr_term);
    }
    Ok(out)
}

/// Chains every layer of `params`, applying tanh in between when enabled.
pub fn gdo_stack(g: &mut Graph<'_>, v: Var, nbrs: &NeighborWeights, params: &GdoParams) -> Result<Var> {
    let mut cur = v;
    for (l, layer) in params.layers.iter().enumerate() {
        if l > 0 && params.tanh_between {
            cur = g.tanh(cur);
        }
        cur = gdo_layer(g, cur, nbrs, layer)?;
    }
    Ok(cur)
}

/// Distils the basic article representations (`d_s x m`) over the
/// partition's retained edges. Returns `d_H x m`.
pub fn distill_law_articles(
    g: &mut Graph<'_>,
    article_reps: Var,
    partition: &CommunityPartition,
    params: &GdoParams,
) -> Result<Var> {
    gdo_stack(g, article_reps, &NeighborWeights::from_partition(partition), params)
}

/// `β = [max over members ‖ min over members]` for one community.
pub fn pool_community_distinction(g: &mut Graph<'_>, distilled: Var, community: &[usize]) -> Result<Var> {
    if community.is_empty() {
        return Err(Error::Empty("community has no members".into()));
    }
    let m = g.shape(distilled).1;
    let mut select = Tensor::zeros(m, community.len());
    for (k, &a) in community.iter().enumerate() {
        if a >= m {
            return Err(Error::Shape(format!("community member {a} out of range {m}")));
        }
        select.set(a, k, 1.0);
    }
    let select = g.constant(select);
    let members = g.matmul(distilled, select);
    let hi = g.max_cols(members);
    let lo = g.min_cols(members);
    Ok(g.concat(&[hi, lo]))
}

/// All community distinction vectors as columns (`2 d_H x k`).
pub fn community_betas(g: &mut Graph<'_>, distilled: Var, partition: &CommunityPartition) -> Result<Var> {
    let betas = partition
        .communities
        .iter()
        .map(|c| pool_community_distinction(g, distilled, c))
        .collect::<Result<Vec<_>>>()?;
    Ok(g.stack_cols(&betas))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PriorContextParams {
    /// `W_g`, `k x d_s`.
    pub w_g: ParamId,
    /// `b_g`, `k x 1`.
    pub b_g: ParamId,
}

impl PriorContextParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, k: usize, d_s: usize) -> Self {
        PriorContextParams {
            w_g: store.add(format!("{name}.w_g"), glorot(k, d_s, rng)),
            b_g: store.add(format!("{name}.b_g"), Tensor::zeros(k, 1)),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct PriorContext {
    /// Pre-softmax community scores, used by the community loss.
    pub logits: Var,
    /// `X̂`.
    pub probs: Var,
    /// `β̂`.
    pub beta_hat: Var,
}

/// `X̂ = softmax(W_g v_b + b_g)`, `β̂ = Σ_i X̂_i β_i`.
pub fn select_prior_context(
    g: &mut Graph<'_>,
    v_b: Var,
    betas: Var,
    params: &PriorContextParams,
) -> Result<PriorContext> {
    let w = g.param(params.w_g);
    let b = g.param(params.b_g);
    let (k, d) = g.shape(w);
    if g.shape(v_b) != (d, 1) || g.shape(betas).1 != k {
        return Err(Error::Shape(format!(
            "prior context: W_g {k}x{d}, fact {:?}, betas {:?}",
            g.shape(v_b),
            g.shape(betas)
        )));
    }
    let logits = g.linear(w, v_b, b);
    let probs = g.softmax(logits);
    let beta_hat = g.matmul(betas, probs);
    Ok(PriorContext {
        logits,
        probs,
        beta_hat,
    })
}
