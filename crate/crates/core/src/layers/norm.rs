use super::add_const;
use crate::error::Result;
use crate::tensor::{Graph, ParamId, ParamStore, Real, Var};

pub const LAYER_NORM_EPS: f64 = 1e-6;

/// Per-vector standardization with learnable gain and bias.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub dim: usize,
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<F: Real>(store: &mut ParamStore<F>, prefix: &str, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            dim,
            gain: add_const(store, &format!("{prefix}.gain"), dim, 1.0)?,
            bias: add_const(store, &format!("{prefix}.bias"), dim, 0.0)?,
            eps: LAYER_NORM_EPS,
        })
    }

    pub fn apply<'p, F: Real>(&self, g: &mut Graph<'p, F>, store: &'p ParamStore<F>, x: Var) -> Result<Var> {
        let gain = store.var(g, self.gain);
        let bias = store.var(g, self.bias);
        g.layer_norm(x, gain, bias, self.eps)
    }
}
