use rand::Rng;

use super::{add_const, add_xavier, linear};
use crate::error::Result;
use crate::tensor::{Graph, ParamId, ParamStore, Real, Var};

/// Formulation of the pre-softmax activation `o_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputMode {
    /// `o_t = tanh(W_h h_t + y_{t−1} + W_c c_t)`.
    Conditional,
    /// `o_t = tanh(W_h h_t)`.
    Simple,
}

impl OutputMode {
    pub fn name(self) -> &'static str {
        match self {
            OutputMode::Conditional => "conditional",
            OutputMode::Simple => "simple",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "conditional" => Some(OutputMode::Conditional),
            "simple" => Some(OutputMode::Simple),
            _ => None,
        }
    }
}

/// Hidden-to-output layer producing `o_t` (embedding-sized) and the
/// softmax projection `W_o` (`vocab × emb`, possibly an embedding table).
#[derive(Debug, Clone)]
pub struct OutputHead {
    pub mode: OutputMode,
    pub emb_dim: usize,
    w_h: ParamId,
    w_c: Option<ParamId>,
    b: ParamId,
    w_o: ParamId,
    b_o: ParamId,
}

impl OutputHead {
    /// Registers the hidden layer under `prefix` (and `{prefix}.b_o`);
    /// `w_o` is supplied by the caller so that it can be a tied table.
    #[allow(clippy::too_many_arguments)]
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut impl Rng,
        prefix: &str,
        mode: OutputMode,
        state_dim: usize,
        annotation_dim: usize,
        emb_dim: usize,
        w_o: ParamId,
    ) -> Result<Self> {
        let vocab = store.get(w_o).shape()[0];
        let w_h = add_xavier(store, rng, &format!("{prefix}.W_h"), state_dim, emb_dim)?;
        let w_c = match mode {
            OutputMode::Conditional => Some(add_xavier(store, rng, &format!("{prefix}.W_c"), annotation_dim, emb_dim)?),
            OutputMode::Simple => None,
        };
        let b = add_const(store, &format!("{prefix}.b"), emb_dim, 0.0)?;
        let b_o = add_const(store, &format!("{prefix}.b_o"), vocab, 0.0)?;
        Ok(OutputHead {
            mode,
            emb_dim,
            w_h,
            w_c,
            b,
            w_o,
            b_o,
        })
    }

    /// Parameters owned by the head, excluding `W_o`.
    pub fn param_count(mode: OutputMode, state_dim: usize, annotation_dim: usize, emb_dim: usize, vocab: usize) -> usize {
        let cond = match mode {
            OutputMode::Conditional => annotation_dim * emb_dim,
            OutputMode::Simple => 0,
        };
        state_dim * emb_dim + cond + emb_dim + vocab
    }

    pub fn output_projection(&self) -> ParamId {
        self.w_o
    }

    /// `o_t` of shape `[B, emb]`.
    pub fn hidden<'p, F: Real>(
        &self,
        g: &mut Graph<'p, F>,
        store: &'p ParamStore<F>,
        h: Var,
        y_prev_emb: Var,
        context: Var,
    ) -> Result<Var> {
        let mut pre = linear(g, store, h, self.w_h, Some(self.b))?;
        if let Some(w_c) = self.w_c {
            pre = g.add(pre, y_prev_emb)?;
            let wc = store.var(g, w_c);
            let cc = g.matmul(context, wc)?;
            pre = g.add(pre, cc)?;
        }
        g.tanh(pre)
    }

    /// `W_o o_t + b_o`, shape `[B, vocab]`.
    pub fn project<'p, F: Real>(&self, g: &mut Graph<'p, F>, store: &'p ParamStore<F>, o: Var) -> Result<Var> {
        project_with(g, store, o, self.w_o, self.b_o)
    }

    pub fn logits<'p, F: Real>(
        &self,
        g: &mut Graph<'p, F>,
        store: &'p ParamStore<F>,
        h: Var,
        y_prev_emb: Var,
        context: Var,
    ) -> Result<Var> {
        let o = self.hidden(g, store, h, y_prev_emb, context)?;
        self.project(g, store, o)
    }
}

/// `o · Wᵀ + b` for a `vocab × emb` table `w`.
pub(crate) fn project_with<'p, F: Real>(
    g: &mut Graph<'p, F>,
    store: &'p ParamStore<F>,
    o: Var,
    w: ParamId,
    b: ParamId,
) -> Result<Var> {
    let wv = store.var(g, w);
    let logits = g.matmul_t(o, wv, false, true)?;
    let bv = store.var(g, b);
    g.add_row(logits, bv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn head(mode: OutputMode, vocab: usize, emb: usize) -> (ParamStore<f64>, OutputHead) {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut store = ParamStore::new();
        let w_o = add_xavier(&mut store, &mut rng, "emb.tgt", vocab, emb).unwrap();
        let h = OutputHead::new(&mut store, &mut rng, "out", mode, 3, 4, emb, w_o).unwrap();
        (store, h)
    }

    fn eval(store: &ParamStore<f64>, head: &OutputHead, y: Vec<f64>, c: Vec<f64>) -> Vec<f64> {
        let mut g = Graph::inference();
        let hv = g.constant(&[1, 3], vec![0.3, -0.2, 0.8]).unwrap();
        let n = y.len();
        let yv = g.constant(&[1, n], y).unwrap();
        let cv = g.constant(&[1, 4], c).unwrap();
        let l = head.logits(&mut g, store, hv, yv, cv).unwrap();
        g.value(l).to_vec()
    }

    #[test]
    fn simple_mode_ignores_context_and_feedback() {
        let (store, h) = head(OutputMode::Simple, 6, 5);
        let a = eval(&store, &h, vec![0.1; 5], vec![0.0; 4]);
        let b = eval(&store, &h, vec![-3.0, 2.0, 0.5, 1.0, 9.0], vec![5.0, -1.0, 2.0, 0.3]);
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn conditional_mode_depends_on_context() {
        let (store, h) = head(OutputMode::Conditional, 6, 5);
        let a = eval(&store, &h, vec![0.1; 5], vec![0.0; 4]);
        let b = eval(&store, &h, vec![0.1; 5], vec![1.0; 4]);
        assert_ne!(a, b);
    }

    #[test]
    fn conditional_hand_case_reflects_feedback() {
        // emb_dim == vocab, W_o = I, everything else zero: logits = tanh(y)
        let (mut store, h) = head(OutputMode::Conditional, 4, 4);
        store.tensors_mut().for_each(|t| t.data_mut().iter_mut().for_each(|x| *x = 0.0));
        let w_o = h.output_projection();
        for i in 0..4 {
            store.get_mut(w_o).data_mut()[i * 4 + i] = 1.0;
        }
        let y = vec![0.5, -1.0, 2.0, 0.0];
        let logits = eval(&store, &h, y.clone(), vec![0.7; 4]);
        for (l, v) in logits.iter().zip(&y) {
            assert!((l - v.tanh()).abs() < 1e-12);
        }
        let mut g = Graph::<f64>::inference();
        let lv = g.constant(&[1, 4], logits).unwrap();
        let p = g.softmax(lv).unwrap();
        assert!((g.value(p).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
