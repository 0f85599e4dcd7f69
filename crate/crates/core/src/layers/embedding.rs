use rand::Rng;

use super::add_xavier;
use crate::error::{Error, Result};
use crate::tensor::{Graph, ParamId, ParamStore, Real, Var};

/// Which embedding tables share storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TyingMode {
    /// Source, feedback and output projection are three tables.
    None,
    /// Feedback embeddings and output projection share one table.
    Tied2,
    /// Source, feedback and output share one table over a joint vocabulary.
    Tied3,
}

impl TyingMode {
    pub fn name(self) -> &'static str {
        match self {
            TyingMode::None => "none",
            TyingMode::Tied2 => "tied2",
            TyingMode::Tied3 => "tied3",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(TyingMode::None),
            "tied2" => Some(TyingMode::Tied2),
            "tied3" => Some(TyingMode::Tied3),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddingRole {
    Source,
    Feedback,
}

/// Source/feedback/output tables with their sharing structure.
///
/// The output projection `W_o` is the `vocab × dim` table used transposed,
/// so under tying it is literally the feedback table.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub dim: usize,
    pub tying: TyingMode,
    source: ParamId,
    feedback: ParamId,
    output: ParamId,
}

impl EmbeddingTable {
    pub fn new<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut impl Rng,
        src_vocab: usize,
        tgt_vocab: usize,
        dim: usize,
        tying: TyingMode,
    ) -> Result<Self> {
        let (source, feedback, output) = match tying {
            TyingMode::Tied3 => {
                if src_vocab != tgt_vocab {
                    return Err(Error::config(format!(
                        "tied3 needs one joint vocabulary, got {src_vocab} and {tgt_vocab}"
                    )));
                }
                let t = add_xavier(store, rng, "emb.shared", src_vocab, dim)?;
                (t, t, t)
            }
            TyingMode::Tied2 => {
                let s = add_xavier(store, rng, "emb.src", src_vocab, dim)?;
                let t = add_xavier(store, rng, "emb.tgt", tgt_vocab, dim)?;
                (s, t, t)
            }
            TyingMode::None => {
                let s = add_xavier(store, rng, "emb.src", src_vocab, dim)?;
                let t = add_xavier(store, rng, "emb.tgt", tgt_vocab, dim)?;
                let o = add_xavier(store, rng, "out.W_o", tgt_vocab, dim)?;
                (s, t, o)
            }
        };
        Ok(EmbeddingTable {
            src_vocab,
            tgt_vocab,
            dim,
            tying,
            source,
            feedback,
            output,
        })
    }

    /// View names that resolve to another tensor's storage: `(view, storage)`.
    pub fn aliases(tying: TyingMode) -> &'static [(&'static str, &'static str)] {
        match tying {
            TyingMode::None => &[],
            TyingMode::Tied2 => &[("out.W_o", "emb.tgt")],
            TyingMode::Tied3 => &[
                ("emb.src", "emb.shared"),
                ("emb.tgt", "emb.shared"),
                ("out.W_o", "emb.shared"),
            ],
        }
    }

    pub fn table(&self, role: EmbeddingRole) -> ParamId {
        match role {
            EmbeddingRole::Source => self.source,
            EmbeddingRole::Feedback => self.feedback,
        }
    }

    /// The `vocab × dim` output projection (used transposed).
    pub fn output_projection(&self) -> ParamId {
        self.output
    }

    fn vocab(&self, role: EmbeddingRole) -> usize {
        match role {
            EmbeddingRole::Source => self.src_vocab,
            EmbeddingRole::Feedback => self.tgt_vocab,
        }
    }

    /// Row gather of `ids` from the table playing `role`.
    pub fn embed<'p, F: Real>(
        &self,
        g: &mut Graph<'p, F>,
        store: &'p ParamStore<F>,
        ids: &[u32],
        role: EmbeddingRole,
    ) -> Result<Var> {
        let size = self.vocab(role);
        if let Some(&id) = ids.iter().find(|&&i| i as usize >= size) {
            return Err(Error::Vocab { id, size });
        }
        let table = store.var(g, self.table(role));
        let rows: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        g.gather(table, &rows)
    }
}
