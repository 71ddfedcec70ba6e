//! Hierarchical attentive encoder: word-level Bi-GRU with attention
//! pooling into sentence vectors, then a sentence-level Bi-GRU with
//! attention pooling into one document vector.
//!
//! The same architecture serves as the basic encoder (learned attention
//! queries), the prior re-encoder and the revised re-encoder (queries
//! projected from a distinction context vector).

use rand::Rng;

use crate::autograd::{Graph, Var};
use crate::corpus::vocab::PAD;
use crate::corpus::EncodedFact;
use crate::error::{Error, Result};
use crate::params::{glorot, ParamId, ParamStore};
use crate::tensor::Tensor;

/// One direction of a gated recurrent unit.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GruParams {
    /// Input weights for update, reset and candidate, stacked (`3h x in`).
    pub w: ParamId,
    /// Recurrent weights for update and reset (`2h x h`).
    pub u_zr: ParamId,
    /// Recurrent candidate weights (`h x h`).
    pub u_n: ParamId,
    /// Biases (`3h x 1`).
    pub b: ParamId,
    pub hidden: usize,
}

impl GruParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        input: usize,
        hidden: usize,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        GruParams {
            w: store.add(format!("{name}.w"), Tensor::uniform(3 * hidden, input, bound, rng)),
            u_zr: store.add(format!("{name}.u_zr"), Tensor::uniform(2 * hidden, hidden, bound, rng)),
            u_n: store.add(format!("{name}.u_n"), Tensor::uniform(hidden, hidden, bound, rng)),
            b: store.add(format!("{name}.b"), Tensor::uniform(3 * hidden, 1, bound, rng)),
            hidden,
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        vec![self.w, self.u_zr, self.u_n, self.b]
    }

    /// Runs the cell over `inputs` in the given order, returning one hidden
    /// state per input. The initial state is zero.
    ///
    /// `z = σ(W_z x + U_z h + b_z)`, `r = σ(W_r x + U_r h + b_r)`,
    /// `n = tanh(W_n x + U_n (r ⊙ h) + b_n)`, `h' = h + z ⊙ (n − h)`.
    pub fn run(&self, g: &mut Graph<'_>, inputs: &[Var]) -> Vec<Var> {
        let h_dim = self.hidden;
        let w = g.param(self.w);
        let u_zr = g.param(self.u_zr);
        let u_n = g.param(self.u_n);
        let b = g.param(self.b);
        let mut h = g.constant(Tensor::zeros(h_dim, 1));
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let wx = g.linear(w, x, b);
            let wx_zr = g.slice_rows(wx, 0, 2 * h_dim);
            let wx_n = g.slice_rows(wx, 2 * h_dim, h_dim);
            let uh = g.matmul(u_zr, h);
            let pre = g.add(wx_zr, uh);
            let gates = g.sigmoid(pre);
            let z = g.slice_rows(gates, 0, h_dim);
            let r = g.slice_rows(gates, h_dim, h_dim);
            let rh = g.mul(r, h);
            let un = g.matmul(u_n, rh);
            let cand_pre = g.add(wx_n, un);
            let cand = g.tanh(cand_pre);
            let delta = g.sub(cand, h);
            let step = g.mul(z, delta);
            h = g.add(h, step);
            out.push(h);
        }
        out
    }
}

/// Forward and backward GRUs whose states are concatenated.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BiGru {
    pub forward: GruParams,
    pub backward: GruParams,
}

impl BiGru {
    /// `output` must be even; each direction has `output / 2` units.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        input: usize,
        output: usize,
    ) -> Self {
        assert!(output % 2 == 0 && output > 0, "Bi-GRU output size must be even");
        BiGru {
            forward: GruParams::new(store, rng, &format!("{name}.fwd"), input, output / 2),
            backward: GruParams::new(store, rng, &format!("{name}.bwd"), input, output / 2),
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut v = self.forward.ids();
        v.extend(self.backward.ids());
        v
    }

    pub fn run(&self, g: &mut Graph<'_>, inputs: &[Var]) -> Vec<Var> {
        let fwd = self.forward.run(g, inputs);
        let rev: Vec<Var> = inputs.iter().rev().copied().collect();
        let mut bwd = self.backward.run(g, &rev);
        bwd.reverse();
        fwd.iter()
            .zip(&bwd)
            .map(|(&f, &b)| g.concat(&[f, b]))
            .collect()
    }
}

/// Output of [`attention_pool`].
#[derive(Clone, Copy, Debug)]
pub struct Pooled {
    pub output: Var,
    /// Attention weights as a `T x 1` column.
    pub weights: Var,
}

/// `w = softmax_t(tanh(P h_t)ᵀ q)`, output `Σ_t w_t h_t`. `query` is the
/// already-projected query (or a learned query vector).
pub fn attention_pool(g: &mut Graph<'_>, states: &[Var], proj_state: Var, query: Var) -> Result<Pooled> {
    if states.is_empty() {
        return Err(Error::Empty("attention over an empty sequence".into()));
    }
    let d = g.shape(states[0]).0;
    let (a, d_p) = g.shape(proj_state);
    if d_p != d || g.shape(query) != (a, 1) {
        return Err(Error::Shape(format!(
            "attention: states {d}, projection {a}x{d_p}, query {:?}",
            g.shape(query)
        )));
    }
    let stacked = g.stack_cols(states);
    let projected = g.matmul(proj_state, stacked);
    let keys = g.tanh(projected);
    let keys_t = g.transpose(keys);
    let scores = g.matmul(keys_t, query);
    let weights = g.softmax(scores);
    let output = g.matmul(stacked, weights);
    Ok(Pooled { output, weights })
}

/// Where an encoder's attention queries come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum QueryParams {
    /// Trainable query vectors `u_w`, `u_s`.
    Learned { word: ParamId, sentence: ParamId },
    /// Projections `W_gw`, `W_gs` of an external context vector.
    Projected {
        word: ParamId,
        sentence: ParamId,
        context_dim: usize,
    },
}

/// Query supplied at encode time.
#[derive(Clone, Copy, Debug)]
pub enum AttentionQuery {
    Learned,
    Context(Var),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderDims {
    pub embedding: usize,
    pub word_hidden: usize,
    pub sentence_hidden: usize,
    /// `None` for a learned-query encoder, otherwise the context size.
    pub context: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncoderParams {
    pub name: String,
    pub word_rnn: BiGru,
    pub sentence_rnn: BiGru,
    /// `W_w` (`d_w x d_w`).
    pub word_attention: ParamId,
    /// `W_s` (`d_s x d_s`).
    pub sentence_attention: ParamId,
    pub query: QueryParams,
    pub dims: EncoderDims,
}

impl EncoderParams {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, dims: EncoderDims) -> Self {
        let (dw, ds) = (dims.word_hidden, dims.sentence_hidden);
        let word_rnn = BiGru::new(store, rng, &format!("{name}.word_rnn"), dims.embedding, dw);
        let sentence_rnn = BiGru::new(store, rng, &format!("{name}.sent_rnn"), dw, ds);
        let word_attention = store.add(format!("{name}.w_w"), glorot(dw, dw, rng));
        let sentence_attention = store.add(format!("{name}.w_s"), glorot(ds, ds, rng));
        let query = match dims.context {
            None => QueryParams::Learned {
                word: store.add(format!("{name}.u_w"), Tensor::uniform(dw, 1, 0.1, rng)),
                sentence: store.add(format!("{name}.u_s"), Tensor::uniform(ds, 1, 0.1, rng)),
            },
            Some(c) => QueryParams::Projected {
                word: store.add(format!("{name}.w_gw"), glorot(dw, c, rng)),
                sentence: store.add(format!("{name}.w_gs"), glorot(ds, c, rng)),
                context_dim: c,
            },
        };
        EncoderParams {
            name: name.to_string(),
            word_rnn,
            sentence_rnn,
            word_attention,
            sentence_attention,
            query,
            dims,
        }
    }

    pub fn ids(&self) -> Vec<ParamId> {
        let mut v = self.word_rnn.ids();
        v.extend(self.sentence_rnn.ids());
        v.push(self.word_attention);
        v.push(self.sentence_attention);
        match self.query {
            QueryParams::Learned { word, sentence } | QueryParams::Projected { word, sentence, .. } => {
                v.push(word);
                v.push(sentence);
            }
        }
        v
    }

    pub fn output_dim(&self) -> usize {
        self.dims.sentence_hidden
    }

    fn queries(&self, g: &mut Graph<'_>, query: AttentionQuery) -> Result<(Var, Var)> {
        match (&self.query, query) {
            (QueryParams::Learned { word, sentence }, AttentionQuery::Learned) => {
                Ok((g.param(*word), g.param(*sentence)))
            }
            (
                QueryParams::Projected {
                    word,
                    sentence,
                    context_dim,
                },
                AttentionQuery::Context(q),
            ) => {
                if g.shape(q) != (*context_dim, 1) {
                    return Err(Error::Shape(format!(
                        "{}: context vector {:?}, expected {context_dim}x1",
                        self.name,
                        g.shape(q)
                    )));
                }
                let wq = g.param(*word);
                let sq = g.param(*sentence);
                Ok((g.matmul(wq, q), g.matmul(sq, q)))
            }
            _ => Err(Error::Config(format!(
                "{}: attention query kind does not match encoder",
                self.name
            ))),
        }
    }
}

/// Encodes one fact into a `d_s` vector. PAD tokens, and sentences made
/// only of PAD, are excluded from both recurrence and attention, so a
/// padded fact encodes exactly like the unpadded one.
pub fn hierarchical_encode(
    g: &mut Graph<'_>,
    fact: &EncodedFact,
    embedding: Var,
    params: &EncoderParams,
    query: AttentionQuery,
) -> Result<Var> {
    let (q_word, q_sentence) = params.queries(g, query)?;
    let w_w = g.param(params.word_attention);
    let w_s = g.param(params.sentence_attention);
    let mut sentence_vecs = Vec::with_capacity(fact.sentences.len());
    for sentence in &fact.sentences {
        let words: Vec<Var> = sentence
            .iter()
            .filter(|&&t| t != PAD)
            .map(|&t| g.gather_row(embedding, t as usize))
            .collect();
        if words.is_empty() {
            continue;
        }
        let states = params.word_rnn.run(g, &words);
        sentence_vecs.push(attention_pool(g, &states, w_w, q_word)?.output);
    }
    if sentence_vecs.is_empty() {
        return Err(Error::Empty(format!("{}: fact has no sentences", params.name)));
    }
    let states = params.sentence_rnn.run(g, &sentence_vecs);
    Ok(attention_pool(g, &states, w_s, q_sentence)?.output)
}

/// Pads facts to a common sentence count and sentence length with PAD.
pub fn pad_batch(facts: &[EncodedFact]) -> Vec<EncodedFact> {
    let n_sent = facts.iter().map(|f| f.sentences.len()).max().unwrap_or(0);
    let n_tok = facts
        .iter()
        .flat_map(|f| f.sentences.iter().map(Vec::len))
        .max()
        .unwrap_or(0);
    facts
        .iter()
        .map(|f| {
            let mut sentences: Vec<Vec<u32>> = f
                .sentences
                .iter()
                .map(|s| {
                    let mut s = s.clone();
                    s.resize(n_tok, PAD);
                    s
                })
                .collect();
            sentences.resize(n_sent, vec![PAD; n_tok]);
            EncodedFact { sentences }
        })
        .collect()
}
