use rand::Rng;

use super::{add_const, add_xavier, linear, AttentionHead, GruCell, SourceVars};
use crate::error::Result;
use crate::tensor::{Graph, ParamId, ParamStore, Real, Var};

/// How the first decoder state is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitMode {
    /// `tanh(W_init · mean_j a_j + b_init)`.
    MeanState,
    /// All-zero vector.
    Zero,
}

impl InitMode {
    pub fn name(self) -> &'static str {
        match self {
            InitMode::MeanState => "mean_state",
            InitMode::Zero => "zero",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mean_state" | "mean" => Some(InitMode::MeanState),
            "zero" => Some(InitMode::Zero),
            _ => None,
        }
    }
}

/// Conditional GRU: GRU over the feedback embedding, attention with the
/// intermediate state as query, then a second GRU over the context.
#[derive(Debug, Clone)]
pub struct CgruDecoder {
    pub gru1: GruCell,
    pub attention: AttentionHead,
    pub gru2: GruCell,
    pub init_mode: InitMode,
    init: Option<(ParamId, ParamId)>,
    pub hidden_dim: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct CgruStep {
    pub h: Var,
    pub context: Var,
    pub weights: Var,
}

impl CgruDecoder {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut impl Rng,
        emb_dim: usize,
        annotation_dim: usize,
        hidden_dim: usize,
        alignment_dim: usize,
        init_mode: InitMode,
    ) -> Result<Self> {
        let init = match init_mode {
            InitMode::MeanState => Some((
                add_xavier(store, rng, "dec.init.W", annotation_dim, hidden_dim)?,
                add_const(store, "dec.init.b", hidden_dim, 0.0)?,
            )),
            InitMode::Zero => None,
        };
        let gru1 = GruCell::new(store, rng, "dec.gru1", emb_dim, hidden_dim, false)?;
        let attention = AttentionHead::new(store, rng, "dec.att", annotation_dim, hidden_dim, alignment_dim)?;
        let gru2 = GruCell::new(store, rng, "dec.gru2", annotation_dim, hidden_dim, false)?;
        Ok(CgruDecoder {
            gru1,
            attention,
            gru2,
            init_mode,
            init,
            hidden_dim,
        })
    }

    pub fn param_count(
        emb_dim: usize,
        annotation_dim: usize,
        hidden_dim: usize,
        alignment_dim: usize,
        init_mode: InitMode,
    ) -> usize {
        let init = match init_mode {
            InitMode::MeanState => annotation_dim * hidden_dim + hidden_dim,
            InitMode::Zero => 0,
        };
        init + GruCell::param_count(emb_dim, hidden_dim, false)
            + AttentionHead::param_count(annotation_dim, hidden_dim, alignment_dim)
            + GruCell::param_count(annotation_dim, hidden_dim, false)
    }

    /// Initial hidden state `[B, H]` for a prepared source batch.
    pub fn initial_state<'p, F: Real>(
        &self,
        g: &mut Graph<'p, F>,
        store: &'p ParamStore<F>,
        src: &SourceVars,
        lengths: &[usize],
    ) -> Result<Var> {
        match self.init {
            None => Ok(g.zeros(&[src.batch, self.hidden_dim])),
            Some((w, b)) => {
                let mut weights = vec![F::zero(); src.batch * src.len];
                for (bi, &l) in lengths.iter().enumerate() {
                    let inv = F::one() / F::from_usize(l).expect("length");
                    weights[bi * src.len..bi * src.len + l].iter_mut().for_each(|x| *x = inv);
                }
                let mean = g.time_mean(src.annotations, src.batch, weights)?;
                let pre = linear(g, store, mean, w, Some(b))?;
                g.tanh(pre)
            }
        }
    }

    pub fn step<'p, F: Real>(
        &self,
        g: &mut Graph<'p, F>,
        store: &'p ParamStore<F>,
        y_prev_emb: Var,
        h_prev: Var,
        src: &SourceVars,
    ) -> Result<CgruStep> {
        let s = self.gru1.step(g, store, y_prev_emb, h_prev)?;
        let (context, weights) = self.attention.attend(g, store, src, s)?;
        let h = self.gru2.step(g, store, context, s)?;
        Ok(CgruStep { h, context, weights })
    }
}
