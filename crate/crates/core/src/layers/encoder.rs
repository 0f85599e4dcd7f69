use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamStore, Real, Var};

use super::GruCell;

/// Forward and backward GRU over the source sentence.
#[derive(Debug, Clone)]
pub struct BiEncoder {
    pub fwd: GruCell,
    pub bwd: GruCell,
}

impl BiEncoder {
    pub fn annotation_dim(&self) -> usize {
        self.fwd.hidden_dim + self.bwd.hidden_dim
    }
}

/// Bidirectional encoding of time-major embeddings `[S*B, E]`.
///
/// Returns time-major annotations `[S*B, 2H]` whose row `t*B + b` is
/// `[fwd_t ; bwd_t]` for sentence `b`. Padded positions carry the state of
/// the last valid position and must be masked by the caller.
pub fn encode<'p, F: Real>(
    g: &mut Graph<'p, F>,
    store: &'p ParamStore<F>,
    embeddings: Var,
    lengths: &[usize],
    fwd: &GruCell,
    bwd: &GruCell,
) -> Result<Var> {
    let batch = lengths.len();
    let rows = g.shape(embeddings)[0];
    if batch == 0 || rows == 0 || !rows.is_multiple_of(batch) {
        return Err(Error::contract(format!("encode needs a non-empty sequence (rows {rows}, batch {batch})")));
    }
    let len = rows / batch;
    if lengths.iter().any(|&l| l == 0 || l > len) {
        return Err(Error::contract(format!("invalid source lengths {lengths:?} for padded length {len}")));
    }
    let ragged = lengths.iter().any(|&l| l != len);
    let keep_at = |t: usize| -> Vec<F> {
        lengths
            .iter()
            .map(|&l| if t < l { F::one() } else { F::zero() })
            .collect()
    };

    let run = |g: &mut Graph<'p, F>, cell: &GruCell, order: Vec<usize>| -> Result<Vec<Var>> {
        let proj = cell.project_inputs(g, store, embeddings)?;
        let mut h = g.zeros(&[batch, cell.hidden_dim]);
        let mut states = vec![h; len];
        for t in order {
            let mut x = proj;
            for k in 0..3 {
                x.0[k] = g.slice_rows(proj.0[k], t * batch, batch)?;
            }
            let next = cell.step_projected(g, store, x, h)?;
            h = if ragged { g.blend(next, h, keep_at(t))? } else { next };
            states[t] = h;
        }
        Ok(states)
    };

    let f = run(g, fwd, (0..len).collect())?;
    let b = run(g, bwd, (0..len).rev().collect())?;
    let f = g.concat_rows(&f)?;
    let b = g.concat_rows(&b)?;
    g.concat_cols(&[f, b])
}
