use rand::Rng;

use super::{add_const, add_xavier, linear};
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Real, Var};

/// Additive attention: `e_j = vᵀ tanh(W_s s + W_a a_j + b)`, weights are
/// the softmax of `e` over valid source positions.
#[derive(Debug, Clone)]
pub struct AttentionHead {
    pub annotation_dim: usize,
    pub state_dim: usize,
    pub alignment_dim: usize,
    w_s: ParamId,
    w_a: ParamId,
    b: ParamId,
    v: ParamId,
}

/// Encoder-side values shared by every decoder step of a batch.
#[derive(Debug, Clone, Copy)]
pub struct SourceVars {
    /// Time-major annotations `[S*B, D]`.
    pub annotations: Var,
    /// `annotations · W_a + b`, `[S*B, A]`.
    pub projected: Var,
    /// Additive score mask `[B, S]`: 0 for valid positions, a large
    /// negative number for padding.
    pub score_mask: Var,
    pub batch: usize,
    pub len: usize,
}

// Finite so that checked mode does not trip on masked scores.
pub(crate) const MASK_NEG: f64 = -1e9;

impl AttentionHead {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut impl Rng,
        prefix: &str,
        annotation_dim: usize,
        state_dim: usize,
        alignment_dim: usize,
    ) -> Result<Self> {
        Ok(AttentionHead {
            annotation_dim,
            state_dim,
            alignment_dim,
            w_s: add_xavier(store, rng, &format!("{prefix}.W_s"), state_dim, alignment_dim)?,
            w_a: add_xavier(store, rng, &format!("{prefix}.W_a"), annotation_dim, alignment_dim)?,
            b: add_const(store, &format!("{prefix}.b"), alignment_dim, 0.0)?,
            v: add_xavier(store, rng, &format!("{prefix}.v"), alignment_dim, 1)?,
        })
    }

    pub fn param_count(annotation_dim: usize, state_dim: usize, alignment_dim: usize) -> usize {
        (state_dim + annotation_dim + 2) * alignment_dim
    }

    /// Build the per-batch source values from time-major annotations and
    /// per-sentence lengths.
    pub fn prepare<'p, F: Real>(
        &self,
        g: &mut Graph<'p, F>,
        store: &'p ParamStore<F>,
        annotations: Var,
        lengths: &[usize],
    ) -> Result<SourceVars> {
        let batch = lengths.len();
        let rows = g.shape(annotations)[0];
        if batch == 0 || !rows.is_multiple_of(batch) || lengths.iter().any(|&l| l == 0 || l > rows / batch) {
            return Err(Error::contract(format!(
                "attention over {rows} annotation rows with lengths {lengths:?}"
            )));
        }
        let len = rows / batch;
        let projected = linear(g, store, annotations, self.w_a, Some(self.b))?;
        let mut mask = vec![F::zero(); batch * len];
        for (b, &l) in lengths.iter().enumerate() {
            for s in l..len {
                mask[b * len + s] = F::from_f64_lossy(MASK_NEG);
            }
        }
        let score_mask = g.constant(&[batch, len], mask)?;
        Ok(SourceVars {
            annotations,
            projected,
            score_mask,
            batch,
            len,
        })
    }

    /// Returns `(context [B, D], weights [B, S])` for decoder state `s`.
    pub fn attend<'p, F: Real>(
        &self,
        g: &mut Graph<'p, F>,
        store: &'p ParamStore<F>,
        src: &SourceVars,
        state: Var,
    ) -> Result<(Var, Var)> {
        let ws = store.var(g, self.w_s);
        let sp = g.matmul(state, ws)?;
        let pre = g.add_tiled(src.projected, sp)?;
        let act = g.tanh(pre)?;
        let v = store.var(g, self.v);
        let scores = g.matmul(act, v)?;
        let by_time = g.reshape(scores, &[src.len, src.batch])?;
        let by_batch = g.transpose(by_time)?;
        let masked = g.add(by_batch, src.score_mask)?;
        let weights = g.softmax(masked)?;
        let context = g.weighted_time_sum(weights, src.annotations)?;
        Ok((context, weights))
    }
}
