use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Vocabulary, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::layers::{self, add_const, add_xavier, linear, project_with, GruCell};
use crate::model::{read_container, write_container, Container};
use crate::rng::{sub_rng, Stream};
use crate::tensor::{Grads, Graph, ParamId, ParamStore, Real, Var};
use crate::train::{fit, Metric, Observer, TrainOutcome, TrainSchedule, Trainable};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LmKind {
    /// `h' = tanh(x W + h U + b)`
    SimpleRnn,
    Gru,
}

impl LmKind {
    pub fn name(self) -> &'static str {
        match self {
            LmKind::SimpleRnn => "simple-rnn",
            LmKind::Gru => "gru",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "simple-rnn" | "rnn" => Some(LmKind::SimpleRnn),
            "gru" => Some(LmKind::Gru),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmConfig {
    pub kind: LmKind,
    pub emb_dim: usize,
    pub hidden_dim: usize,
    pub vocab: usize,
    pub dropout_p: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            kind: LmKind::Gru,
            emb_dim: 128,
            hidden_dim: 256,
            vocab: 0,
            dropout_p: 0.2,
        }
    }
}

#[derive(Debug, Clone)]
enum Cell {
    Rnn { w: ParamId, u: ParamId, b: ParamId },
    Gru(GruCell),
}

/// Recurrent next-token model over one vocabulary. Sentences are scored
/// from bos through eos with the state reset per sentence.
#[derive(Debug, Clone)]
pub struct LanguageModel<F: Real = f32> {
    pub config: LmConfig,
    pub seed: u64,
    pub store: ParamStore<F>,
    pub vocab: Option<Vocabulary>,
    emb: ParamId,
    cell: Cell,
    out_w: ParamId,
    out_b: ParamId,
}

fn allowed(vocab: usize) -> Vec<bool> {
    (0..vocab as u32).map(|i| i != PAD && i != BOS).collect()
}

impl<F: Real> LanguageModel<F> {
    pub fn build(config: LmConfig, seed: u64) -> Result<Self> {
        if config.vocab <= 4 || config.emb_dim == 0 || config.hidden_dim == 0 {
            return Err(Error::config("language model needs a vocabulary beyond the reserved ids and positive dims"));
        }
        if !(0.0..1.0).contains(&config.dropout_p) {
            return Err(Error::config("dropout probability must lie in [0, 1)"));
        }
        let mut rng = sub_rng(seed, Stream::Init);
        let mut store = ParamStore::new();
        let (v, e, h) = (config.vocab, config.emb_dim, config.hidden_dim);
        let emb = add_xavier(&mut store, &mut rng, "lm.emb", v, e)?;
        let cell = match config.kind {
            LmKind::SimpleRnn => Cell::Rnn {
                w: add_xavier(&mut store, &mut rng, "lm.rnn.W", e, h)?,
                u: add_xavier(&mut store, &mut rng, "lm.rnn.U", h, h)?,
                b: add_const(&mut store, "lm.rnn.b", h, 0.0)?,
            },
            LmKind::Gru => Cell::Gru(GruCell::new(&mut store, &mut rng, "lm.gru", e, h, false)?),
        };
        let out_w = add_xavier(&mut store, &mut rng, "lm.out.W", v, h)?;
        let out_b = add_const(&mut store, "lm.out.b", v, 0.0)?;
        Ok(LanguageModel {
            config,
            seed,
            store,
            vocab: None,
            emb,
            cell,
            out_w,
            out_b,
        })
    }

    pub fn with_vocab(mut self, vocab: Vocabulary) -> Result<Self> {
        if vocab.len() != self.config.vocab {
            return Err(Error::config(format!(
                "vocabulary has {} entries, model expects {}",
                vocab.len(),
                self.config.vocab
            )));
        }
        self.vocab = Some(vocab);
        Ok(self)
    }

    pub fn count_params(&self) -> usize {
        self.store.scalar_count()
    }

    fn check_ids(&self, sentences: &[Vec<u32>]) -> Result<()> {
        let size = self.config.vocab;
        if let Some(&id) = sentences.iter().flatten().find(|&&i| i as usize >= size) {
            return Err(Error::Vocab { id, size });
        }
        Ok(())
    }

    /// Hidden states for every step of a padded batch, `[T*B, H]`.
    fn run<'p>(
        &'p self,
        g: &mut Graph<'p, F>,
        batch: &[Vec<u32>],
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let b = batch.len();
        let t_max = batch.iter().map(|s| s.len() + 1).max().expect("non-empty");
        let mut inputs = vec![PAD; t_max * b];
        for (bi, s) in batch.iter().enumerate() {
            for t in 0..=s.len() {
                inputs[t * b + bi] = if t == 0 { BOS } else { s[t - 1] };
            }
        }
        let table = self.store.var(g, self.emb);
        let rows: Vec<usize> = inputs.iter().map(|&i| i as usize).collect();
        let mut x = g.gather(table, &rows)?;
        let p = self.config.dropout_p;
        if let Some(rng) = dropout.as_deref_mut() {
            x = layers::dropout(g, x, p, true, rng)?;
        }
        let mut h = g.zeros(&[b, self.config.hidden_dim]);
        let mut outs = Vec::with_capacity(t_max);
        match &self.cell {
            Cell::Rnn { w, u, b: bias } => {
                let xw = linear(g, &self.store, x, *w, Some(*bias))?;
                for t in 0..t_max {
                    let xt = g.slice_rows(xw, t * b, b)?;
                    let hu = linear(g, &self.store, h, *u, None)?;
                    let a = g.add(xt, hu)?;
                    h = g.tanh(a)?;
                    outs.push(h);
                }
            }
            Cell::Gru(cell) => {
                let proj = cell.project_inputs(g, &self.store, x)?;
                for t in 0..t_max {
                    let mut parts = proj.0;
                    for p in parts.iter_mut() {
                        *p = g.slice_rows(*p, t * b, b)?;
                    }
                    h = cell.step_projected(g, &self.store, crate::layers::GruInputs(parts), h)?;
                    outs.push(h);
                }
            }
        }
        let mut all = g.concat_rows(&outs)?;
        if let Some(rng) = dropout {
            all = layers::dropout(g, all, p, true, rng)?;
        }
        project_with(g, &self.store, all, self.out_w, self.out_b)
    }

    /// Per-sentence mean token NLL (eos included), averaged over the batch.
    pub fn forward_loss<'p>(
        &'p self,
        g: &mut Graph<'p, F>,
        batch: &[Vec<u32>],
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        self.check_ids(batch)?;
        let logits = self.run(g, batch, dropout)?;
        let b = batch.len();
        let t_max = batch.iter().map(|s| s.len() + 1).max().expect("non-empty");
        let mut targets = vec![PAD; t_max * b];
        let mut weights = vec![F::zero(); t_max * b];
        for (bi, s) in batch.iter().enumerate() {
            let w = F::from_f64_lossy(1.0 / ((s.len() + 1) * b) as f64);
            for t in 0..=s.len() {
                targets[t * b + bi] = s.get(t).copied().unwrap_or(EOS);
                weights[t * b + bi] = w;
            }
        }
        g.cross_entropy(logits, &targets, weights, Some(&allowed(self.config.vocab)))
    }

    /// Full next-token log-distributions after bos and after each token;
    /// `len + 1` rows.
    pub fn step_logprobs(&self, sentence: &[u32]) -> Result<Vec<Vec<f64>>> {
        let batch = [sentence.to_vec()];
        self.check_ids(&batch)?;
        let mut g = Graph::inference();
        let logits = self.run(&mut g, &batch, None)?;
        let mask = allowed(self.config.vocab);
        Ok(g.value(logits)
            .chunks(self.config.vocab)
            .map(|r| crate::model::masked_log_softmax(r, &mask))
            .collect())
    }

    /// `Σ ln P(w_t | bos, w_<t)` over the sentence and its eos.
    pub fn score(&self, sentence: &[u32]) -> Result<f64> {
        let rows = self.step_logprobs(sentence)?;
        Ok(rows
            .iter()
            .enumerate()
            .map(|(t, r)| r[sentence.get(t).copied().unwrap_or(EOS) as usize])
            .sum())
    }

    /// Score a tokenized sentence through the model vocabulary.
    pub fn score_tokens<S: AsRef<str>>(&self, tokens: &[S]) -> Result<f64> {
        let vocab = self
            .vocab
            .as_ref()
            .ok_or_else(|| Error::contract("language model has no vocabulary"))?;
        self.score(&vocab.encode(tokens))
    }

    /// Per-token perplexity, eos tokens included.
    pub fn perplexity(&self, sentences: &[Vec<u32>]) -> Result<f64> {
        if sentences.is_empty() {
            return Err(Error::contract("perplexity of an empty corpus"));
        }
        let mut total = 0.0;
        let mut n = 0;
        for s in sentences {
            total += self.score(s)?;
            n += s.len() + 1;
        }
        Ok((-total / n as f64).exp())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let c = self.config.clone();
        let meta = [
            ("seed", self.seed.to_string()),
            ("kind", c.kind.name().to_string()),
            ("emb_dim", c.emb_dim.to_string()),
            ("hidden_dim", c.hidden_dim.to_string()),
            ("vocab", c.vocab.to_string()),
            ("dropout", c.dropout_p.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        write_container(
            path,
            &Container {
                kind: "lm".into(),
                meta,
                vocabs: self.vocab.iter().map(|v| ("lm".to_string(), v.clone())).collect(),
                aliases: Vec::new(),
                tensors: self.store.iter().map(|(_, n, t)| (n.to_string(), t.clone())).collect(),
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = read_container::<F>(path)?;
        if c.kind != "lm" {
            return Err(Error::checkpoint("kind", format!("expected lm, found {}", c.kind)));
        }
        let get = |k: &str| -> Result<&str> { c.meta(k).ok_or_else(|| Error::checkpoint(k, "missing")) };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::checkpoint(k, "not an integer"))
        };
        let config = LmConfig {
            kind: LmKind::parse(get("kind")?).ok_or_else(|| Error::checkpoint("kind", "unknown cell"))?,
            emb_dim: num("emb_dim")?,
            hidden_dim: num("hidden_dim")?,
            vocab: num("vocab")?,
            dropout_p: get("dropout")?
                .parse()
                .map_err(|_| Error::checkpoint("dropout", "not a number"))?,
        };
        let seed = get("seed")?.parse().map_err(|_| Error::checkpoint("seed", "not an integer"))?;
        let mut lm = Self::build(config, seed)?;
        let vocab = c.vocab("lm").cloned();
        crate::model::restore_tensors(&mut lm.store, c.tensors)?;
        if let Some(v) = vocab {
            lm = lm.with_vocab(v)?;
        }
        Ok(lm)
    }
}

impl<F: Real> Trainable<F> for LanguageModel<F> {
    type Item = Vec<u32>;

    fn params(&self) -> &ParamStore<F> {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.store
    }

    fn loss_and_grads(&self, batch: &[Vec<u32>], dropout: &mut ChaCha8Rng) -> Result<(f64, Grads<F>)> {
        let mut g = Graph::new();
        let loss = self.forward_loss(&mut g, batch, Some(dropout))?;
        let value = g.value(loss)[0].as_f64();
        g.backward(loss)?;
        Ok((value, ParamStore::collect_grads(&g)))
    }

    fn length_key(item: &Vec<u32>) -> (usize, usize) {
        (item.len(), 0)
    }
}

/// Train with perplexity on `valid` as the early-stopping score.
pub fn lm_train<F: Real>(
    model: LanguageModel<F>,
    corpus: &[Vec<u32>],
    valid: &[Vec<u32>],
    schedule: &TrainSchedule,
    seed: u64,
    observer: &mut dyn Observer<LanguageModel<F>>,
) -> Result<TrainOutcome<LanguageModel<F>>> {
    if valid.is_empty() {
        return Err(Error::contract("language model validation set is empty"));
    }
    let weights = vec![1; corpus.len()];
    fit(
        model,
        corpus,
        &weights,
        schedule,
        seed,
        Metric::LowerIsBetter,
        |m: &LanguageModel<F>| m.perplexity(valid),
        observer,
    )
}

/// Random sentences for quick statistical checks.
#[doc(hidden)]
pub fn random_sentences(rng: &mut impl Rng, n: usize, vocab: u32, max_len: usize) -> Vec<Vec<u32>> {
    (0..n)
        .map(|_| (0..rng.gen_range(1..=max_len)).map(|_| rng.gen_range(4..vocab)).collect())
        .collect()
}
