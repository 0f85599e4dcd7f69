use rand::Rng;

use super::{add_const, add_xavier, LayerNorm};
use crate::error::Result;
use crate::tensor::{Graph, ParamId, ParamStore, Real, Var};

/// Gated recurrent unit.
///
/// ```text
/// z  = σ(x W_z + h U_z + b_z)
/// r  = σ(x W_r + h U_r + b_r)
/// h̃  = tanh(x W_h + (r ⊙ h) U_h + b_h)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
///
/// With layer normalization each of the three pre-activations is
/// normalized before its nonlinearity.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    w: [ParamId; 3],
    u: [ParamId; 3],
    b: [ParamId; 3],
    ln: Option<[LayerNorm; 3]>,
}

const GATES: [&str; 3] = ["z", "r", "h"];

/// Input-side contributions `x W_g + b_g` for the three gates.
#[derive(Debug, Clone, Copy)]
pub struct GruInputs(pub [Var; 3]);

impl GruCell {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut impl Rng,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        layer_norm: bool,
    ) -> Result<Self> {
        let mut w = Vec::new();
        let mut u = Vec::new();
        let mut b = Vec::new();
        for gate in GATES {
            w.push(add_xavier(store, rng, &format!("{prefix}.W_{gate}"), input_dim, hidden_dim)?);
            u.push(add_xavier(store, rng, &format!("{prefix}.U_{gate}"), hidden_dim, hidden_dim)?);
            b.push(add_const(store, &format!("{prefix}.b_{gate}"), hidden_dim, 0.0)?);
        }
        let ln = if layer_norm {
            Some([
                LayerNorm::new(store, &format!("{prefix}.ln_z"), hidden_dim)?,
                LayerNorm::new(store, &format!("{prefix}.ln_r"), hidden_dim)?,
                LayerNorm::new(store, &format!("{prefix}.ln_h"), hidden_dim)?,
            ])
        } else {
            None
        };
        Ok(GruCell {
            input_dim,
            hidden_dim,
            w: [w[0], w[1], w[2]],
            u: [u[0], u[1], u[2]],
            b: [b[0], b[1], b[2]],
            ln,
        })
    }

    /// Scalar parameter count for the given shape.
    pub fn param_count(input_dim: usize, hidden_dim: usize, layer_norm: bool) -> usize {
        let gates = 3 * (input_dim * hidden_dim + hidden_dim * hidden_dim + hidden_dim);
        gates + if layer_norm { 3 * 2 * hidden_dim } else { 0 }
    }

    /// Compute `x W_g + b_g` for a block of rows at once.
    pub fn project_inputs<'p, F: Real>(
        &self,
        g: &mut Graph<'p, F>,
        store: &'p ParamStore<F>,
        x: Var,
    ) -> Result<GruInputs> {
        let mut out = [x; 3];
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = super::linear(g, store, x, self.w[k], Some(self.b[k]))?;
        }
        Ok(GruInputs(out))
    }

    fn pre_activation<'p, F: Real>(
        &self,
        g: &mut Graph<'p, F>,
        store: &'p ParamStore<F>,
        gate: usize,
        input: Var,
        recurrent: Var,
    ) -> Result<Var> {
        let u = store.var(g, self.u[gate]);
        let hu = g.matmul(recurrent, u)?;
        let a = g.add(input, hu)?;
        match &self.ln {
            Some(ln) => ln[gate].apply(g, store, a),
            None => Ok(a),
        }
    }

    /// One recurrence step from precomputed input projections.
    pub fn step_projected<'p, F: Real>(
        &self,
        g: &mut Graph<'p, F>,
        store: &'p ParamStore<F>,
        x: GruInputs,
        h_prev: Var,
    ) -> Result<Var> {
        let [xz, xr, xh] = x.0;
        let az = self.pre_activation(g, store, 0, xz, h_prev)?;
        let z = g.sigmoid(az)?;
        let ar = self.pre_activation(g, store, 1, xr, h_prev)?;
        let r = g.sigmoid(ar)?;
        let rh = g.mul(r, h_prev)?;
        let ah = self.pre_activation(g, store, 2, xh, rh)?;
        let cand = g.tanh(ah)?;
        let delta = g.sub(cand, h_prev)?;
        let upd = g.mul(z, delta)?;
        g.add(h_prev, upd)
    }

    pub fn step<'p, F: Real>(
        &self,
        g: &mut Graph<'p, F>,
        store: &'p ParamStore<F>,
        x: Var,
        h_prev: Var,
    ) -> Result<Var> {
        let proj = self.project_inputs(g, store, x)?;
        self.step_projected(g, store, proj, h_prev)
    }
}
