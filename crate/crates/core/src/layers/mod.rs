//! Neural building blocks of the translation model.
//!
//! Layers are plain structs of [`ParamId`]s plus dimensions; the tensors
//! themselves live in a [`ParamStore`] so a model can be cast, saved and
//! shared without touching layer code.

mod attention;
mod cgru;
mod embedding;
mod encoder;
mod gru;
mod norm;
mod output;

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Real, Tensor, Var};

pub use attention::{AttentionHead, SourceVars};
pub use cgru::{CgruDecoder, CgruStep, InitMode};
pub use embedding::{EmbeddingRole, EmbeddingTable, TyingMode};
pub use encoder::{encode, BiEncoder};
pub use gru::{GruCell, GruInputs};
pub use norm::LayerNorm;
pub use output::{OutputHead, OutputMode};
pub(crate) use output::project_with;

/// Glorot/Xavier uniform sample for a `rows × cols` matrix.
pub fn xavier<F: Real>(rng: &mut impl Rng, rows: usize, cols: usize) -> Tensor<F> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| F::from_f64_lossy(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::new(&[rows, cols], data).expect("positive dims")
}

pub(crate) fn add_xavier<F: Real>(
    store: &mut ParamStore<F>,
    rng: &mut impl Rng,
    name: &str,
    rows: usize,
    cols: usize,
) -> Result<ParamId> {
    store.add(name, xavier(rng, rows, cols))
}

pub(crate) fn add_const<F: Real>(store: &mut ParamStore<F>, name: &str, len: usize, value: f64) -> Result<ParamId> {
    store.add(name, Tensor::new(&[len], vec![F::from_f64_lossy(value); len])?)
}

/// `x · W + b` for a batch of row vectors.
pub(crate) fn linear<'p, F: Real>(
    g: &mut Graph<'p, F>,
    store: &'p ParamStore<F>,
    x: Var,
    w: ParamId,
    b: Option<ParamId>,
) -> Result<Var> {
    let wv = store.var(g, w);
    let y = g.matmul(x, wv)?;
    match b {
        Some(b) => {
            let bv = store.var(g, b);
            g.add_row(y, bv)
        }
        None => Ok(y),
    }
}

/// Inverted dropout: in training mode each entry is zeroed with
/// probability `p` and survivors are scaled by `1/(1−p)`.
pub fn dropout<F: Real>(
    g: &mut Graph<'_, F>,
    x: Var,
    p: f64,
    training: bool,
    rng: &mut impl Rng,
) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::contract(format!("dropout probability {p} outside [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok(x);
    }
    let keep = F::from_f64_lossy(1.0 / (1.0 - p));
    let mask = (0..g.value(x).len())
        .map(|_| if rng.gen::<f64>() < p { F::zero() } else { keep })
        .collect();
    g.mul_const(x, mask)
}
