//! Word-level and factored encoder-decoder models.

mod checkpoint;
mod config;

use rand_chacha::ChaCha8Rng;

use crate::corpus::{ParallelCorpus, Vocabulary, BOS, EOS, PAD, UNK};
use crate::error::{Error, Result};
use crate::layers::{
    self, encode, project_with, BiEncoder, CgruDecoder, EmbeddingRole, EmbeddingTable, GruCell, OutputHead,
    SourceVars,
};
use crate::rng::{sub_rng, Stream};
use crate::tensor::{Graph, ParamId, ParamStore, Real, Var};

pub(crate) use checkpoint::restore_tensors;
pub use checkpoint::{read_container, write_container, Container, MAGIC};
pub use config::{H2oMode, ModelConfig, CONFIG_KEYS};

/// Vocabularies a trained model was built over.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelVocabs {
    pub src: Vocabulary,
    pub tgt: Vocabulary,
    pub factor: Option<Vocabulary>,
}

impl ModelVocabs {
    /// Vocabularies over a corpus; `joint` builds one table from both
    /// sides, as three-way tying requires.
    pub fn build(corpus: &ParallelCorpus, joint: bool, max_size: Option<usize>) -> Self {
        let (src, tgt) = if joint {
            let v = Vocabulary::build(corpus.src.iter().chain(&corpus.tgt).map(Vec::as_slice), max_size);
            (v.clone(), v)
        } else {
            (
                Vocabulary::build(corpus.src.iter().map(Vec::as_slice), max_size),
                Vocabulary::build(corpus.tgt.iter().map(Vec::as_slice), max_size),
            )
        };
        let factor = corpus
            .factors
            .as_ref()
            .map(|f| Vocabulary::build(f.iter().map(Vec::as_slice), None));
        ModelVocabs { src, tgt, factor }
    }

    /// Map a corpus to id examples; unknown tokens become unk.
    pub fn encode(&self, corpus: &ParallelCorpus) -> Result<Vec<Example>> {
        if corpus.factors.is_some() != self.factor.is_some() {
            return Err(Error::config("corpus and vocabularies disagree on target factors"));
        }
        Ok((0..corpus.len())
            .map(|i| Example {
                src: self.src.encode(&corpus.src[i]),
                tgt: self.tgt.encode(&corpus.tgt[i]),
                factors: self
                    .factor
                    .as_ref()
                    .map(|fv| fv.encode(&corpus.factors.as_ref().expect("checked")[i])),
            })
            .collect())
    }
}

/// One training pair as ids, without bos/eos.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
    pub factors: Option<Vec<u32>>,
}

impl Example {
    pub fn new(src: Vec<u32>, tgt: Vec<u32>) -> Self {
        Example { src, tgt, factors: None }
    }
}

#[derive(Debug, Clone)]
struct FactorHead {
    w_o: ParamId,
    b_o: ParamId,
    separate: Option<OutputHead>,
}

/// Encoder states of one source sentence, reused by every decoder step.
#[derive(Debug, Clone)]
pub struct EncodedSource<F> {
    annotations: Vec<F>,
    projected: Vec<F>,
    len: usize,
    init: Vec<F>,
}

impl<F: Real> EncodedSource<F> {
    /// Source length including the appended eos.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Decoder state before the first target token.
    pub fn initial_state(&self) -> &[F] {
        &self.init
    }
}

/// Result of advancing `K` hypotheses by one token.
#[derive(Debug, Clone)]
pub struct StepOutput<F> {
    /// `K × tgt_vocab` log-probabilities; pad and bos are `-inf`.
    pub logprobs: Vec<Vec<f64>>,
    /// `K × factor_vocab` log-probabilities over real tags (factored only).
    pub factor_logprobs: Option<Vec<Vec<f64>>>,
    pub states: Vec<Vec<F>>,
    /// `K × source length` attention weights.
    pub attention: Vec<Vec<F>>,
}

/// Encoder-decoder with its parameters.
#[derive(Debug, Clone)]
pub struct Seq2SeqModel<F: Real = f32> {
    pub config: ModelConfig,
    pub seed: u64,
    pub store: ParamStore<F>,
    pub vocabs: Option<ModelVocabs>,
    embeddings: EmbeddingTable,
    encoder: BiEncoder,
    decoder: CgruDecoder,
    head: OutputHead,
    factor: Option<FactorHead>,
}

fn lemma_mask(vocab: usize) -> Vec<bool> {
    (0..vocab as u32).map(|i| i != PAD && i != BOS).collect()
}

fn factor_mask(vocab: usize) -> Vec<bool> {
    (0..vocab).map(|i| i >= 4).collect()
}

/// Log-softmax over allowed columns; disallowed entries are `-inf`.
pub(crate) fn masked_log_softmax<F: Real>(row: &[F], allowed: &[bool]) -> Vec<f64> {
    let max = row
        .iter()
        .zip(allowed)
        .filter(|(_, &a)| a)
        .map(|(x, _)| x.as_f64())
        .fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = row
        .iter()
        .zip(allowed)
        .filter(|(_, &a)| a)
        .map(|(x, _)| (x.as_f64() - max).exp())
        .sum();
    let lse = max + z.ln();
    row.iter()
        .zip(allowed)
        .map(|(x, &a)| if a { x.as_f64() - lse } else { f64::NEG_INFINITY })
        .collect()
}

impl<F: Real> Seq2SeqModel<F> {
    /// Fresh model with Xavier-initialized matrices and zero biases.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = sub_rng(seed, Stream::Init);
        let mut store = ParamStore::new();
        let c = &config;
        let e = c.emb_dim;
        let d = c.annotation_dim();
        let embeddings = EmbeddingTable::new(&mut store, &mut rng, c.src_vocab, c.tgt_vocab, e, c.tying)?;
        let encoder = BiEncoder {
            fwd: GruCell::new(&mut store, &mut rng, "enc.fwd", e, c.enc_hidden, true)?,
            bwd: GruCell::new(&mut store, &mut rng, "enc.bwd", e, c.enc_hidden, true)?,
        };
        let decoder = CgruDecoder::new(
            &mut store,
            &mut rng,
            e,
            d,
            c.dec_hidden,
            c.effective_alignment_dim(),
            c.init_mode,
        )?;
        let head = OutputHead::new(
            &mut store,
            &mut rng,
            "out",
            c.output_mode,
            c.dec_hidden,
            d,
            e,
            embeddings.output_projection(),
        )?;
        let factor = if c.factored {
            let w_o = layers::add_xavier(&mut store, &mut rng, "fout.W_o", c.factor_vocab, e)?;
            Some(match c.h2o {
                H2oMode::Shared => FactorHead {
                    w_o,
                    b_o: layers::add_const(&mut store, "fout.b_o", c.factor_vocab, 0.0)?,
                    separate: None,
                },
                H2oMode::Separate => {
                    let h = OutputHead::new(&mut store, &mut rng, "fout", c.output_mode, c.dec_hidden, d, e, w_o)?;
                    FactorHead {
                        w_o,
                        b_o: store.id("fout.b_o").expect("registered by head"),
                        separate: Some(h),
                    }
                }
            })
        } else {
            None
        };
        Ok(Seq2SeqModel {
            config,
            seed,
            store,
            vocabs: None,
            embeddings,
            encoder,
            decoder,
            head,
            factor,
        })
    }

    pub fn with_vocabs(mut self, vocabs: ModelVocabs) -> Result<Self> {
        let fsize = vocabs.factor.as_ref().map_or(0, Vocabulary::len);
        if vocabs.src.len() != self.config.src_vocab
            || vocabs.tgt.len() != self.config.tgt_vocab
            || (self.config.factored && fsize != self.config.factor_vocab)
        {
            return Err(Error::config(format!(
                "vocabulary sizes {}/{}/{} do not match the model configuration {}/{}/{}",
                vocabs.src.len(),
                vocabs.tgt.len(),
                fsize,
                self.config.src_vocab,
                self.config.tgt_vocab,
                self.config.factor_vocab
            )));
        }
        self.vocabs = Some(vocabs);
        Ok(self)
    }

    /// Same model in another precision.
    pub fn cast<G: Real>(&self) -> Seq2SeqModel<G> {
        Seq2SeqModel {
            config: self.config.clone(),
            seed: self.seed,
            store: self.store.cast(),
            vocabs: self.vocabs.clone(),
            embeddings: self.embeddings.clone(),
            encoder: self.encoder.clone(),
            decoder: self.decoder.clone(),
            head: self.head.clone(),
            factor: self.factor.clone(),
        }
    }

    /// Number of scalar parameters actually allocated.
    pub fn count_params(&self) -> usize {
        self.store.scalar_count()
    }

    /// Tied views as `(view, storage)` name pairs.
    pub fn aliases(&self) -> &'static [(&'static str, &'static str)] {
        EmbeddingTable::aliases(self.config.tying)
    }

    pub fn embeddings(&self) -> &EmbeddingTable {
        &self.embeddings
    }

    pub fn is_factored(&self) -> bool {
        self.factor.is_some()
    }

    /// FNV-1a hash over parameter names and value bits.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for (_, name, t) in self.store.iter() {
            eat(name.as_bytes());
            let mut buf = Vec::new();
            F::write_le(t.data(), &mut buf);
            eat(&buf);
        }
        h
    }

    fn check_batch(&self, batch: &[Example]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::contract("empty batch"));
        }
        for ex in batch {
            if ex.src.is_empty() || ex.tgt.is_empty() {
                return Err(Error::contract("source and target sequences must be non-empty"));
            }
            if self.factor.is_some() {
                match &ex.factors {
                    Some(f) if f.len() == ex.tgt.len() => {}
                    Some(f) => {
                        return Err(Error::contract(format!(
                            "factor stream length {} differs from lemma stream length {}",
                            f.len(),
                            ex.tgt.len()
                        )))
                    }
                    None => return Err(Error::contract("factored model needs factor ids")),
                }
            }
        }
        Ok(())
    }

    /// Batch loss: per-sentence mean token NLL, averaged over sentences.
    /// Factored models add the factor NLL of every non-eos step.
    ///
    /// With `dropout` set, the three dropout sites are active and draw
    /// their masks from it.
    pub fn forward_loss<'p>(
        &'p self,
        g: &mut Graph<'p, F>,
        batch: &[Example],
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        self.forward_loss_with(g, &self.store, batch, dropout)
    }

    /// [`forward_loss`](Self::forward_loss) reading parameters from `store`,
    /// which must have this model's layout (a clone of `self.store`).
    pub fn forward_loss_with<'p>(
        &self,
        g: &mut Graph<'p, F>,
        store: &'p ParamStore<F>,
        batch: &[Example],
        mut dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        self.check_batch(batch)?;
        if store.len() != self.store.len() {
            return Err(Error::contract("parameter store does not match the model layout"));
        }
        let p = self.config.dropout_p;
        let mut drop = |g: &mut Graph<'p, F>, x: Var| -> Result<Var> {
            match dropout.as_deref_mut() {
                Some(rng) => layers::dropout(g, x, p, true, rng),
                None => Ok(x),
            }
        };
        let b = batch.len();

        let src_lens: Vec<usize> = batch.iter().map(|e| e.src.len() + 1).collect();
        let s_max = *src_lens.iter().max().expect("non-empty");
        let mut src_ids = vec![PAD; s_max * b];
        for (bi, ex) in batch.iter().enumerate() {
            for t in 0..src_lens[bi] {
                src_ids[t * b + bi] = ex.src.get(t).copied().unwrap_or(EOS);
            }
        }
        let x = self.embeddings.embed(g, store, &src_ids, EmbeddingRole::Source)?;
        let x = drop(g, x)?;
        let ann = encode(g, store, x, &src_lens, &self.encoder.fwd, &self.encoder.bwd)?;
        let ann = drop(g, ann)?;
        let src = self.decoder.attention.prepare(g, store, ann, &src_lens)?;
        let mut h = self.decoder.initial_state(g, store, &src, &src_lens)?;

        let t_max = batch.iter().map(|e| e.tgt.len() + 1).max().expect("non-empty");
        let mut feedback = vec![PAD; t_max * b];
        let mut targets = vec![PAD; t_max * b];
        let mut weights = vec![F::zero(); t_max * b];
        let mut ftargets = vec![PAD; t_max * b];
        let mut fweights = vec![F::zero(); t_max * b];
        for (bi, ex) in batch.iter().enumerate() {
            let n = ex.tgt.len();
            let w = F::from_f64_lossy(1.0 / ((n + 1) * b) as f64);
            for t in 0..=n {
                let r = t * b + bi;
                feedback[r] = if t == 0 { BOS } else { ex.tgt[t - 1] };
                targets[r] = if t < n { ex.tgt[t] } else { EOS };
                weights[r] = w;
                if let (Some(f), true) = (&ex.factors, t < n) {
                    if f[t] != UNK {
                        ftargets[r] = f[t];
                        fweights[r] = w;
                    }
                }
            }
        }
        let fb = self.embeddings.embed(g, store, &feedback, EmbeddingRole::Feedback)?;

        let mut outs = Vec::with_capacity(t_max);
        let mut factor_outs = Vec::new();
        for t in 0..t_max {
            let y = g.slice_rows(fb, t * b, b)?;
            let st = self.decoder.step(g, store, y, h, &src)?;
            h = st.h;
            let o = self.head.hidden(g, store, h, y, st.context)?;
            outs.push(drop(g, o)?);
            if let Some(FactorHead {
                separate: Some(fh), ..
            }) = &self.factor
            {
                let fo = fh.hidden(g, store, h, y, st.context)?;
                factor_outs.push(drop(g, fo)?);
            }
        }
        let o_all = g.concat_rows(&outs)?;
        let logits = self.head.project(g, store, o_all)?;
        let mut loss = g.cross_entropy(logits, &targets, weights, Some(&lemma_mask(self.config.tgt_vocab)))?;
        if let Some(fh) = &self.factor {
            let fo = if fh.separate.is_some() {
                g.concat_rows(&factor_outs)?
            } else {
                o_all
            };
            let flogits = project_with(g, store, fo, fh.w_o, fh.b_o)?;
            let floss = g.cross_entropy(flogits, &ftargets, fweights, Some(&factor_mask(self.config.factor_vocab)))?;
            loss = g.add(loss, floss)?;
        }
        Ok(loss)
    }

    /// Loss value without building gradients or applying dropout.
    pub fn loss(&self, batch: &[Example]) -> Result<f64> {
        let mut g = Graph::inference();
        let l = self.forward_loss(&mut g, batch, None)?;
        Ok(g.value(l)[0].as_f64())
    }

    /// Run the encoder over `src` (eos appended).
    pub fn encode_source(&self, src: &[u32]) -> Result<EncodedSource<F>> {
        let store = &self.store;
        let mut ids = src.to_vec();
        ids.push(EOS);
        let len = ids.len();
        let mut g = Graph::inference();
        let x = self.embeddings.embed(&mut g, store, &ids, EmbeddingRole::Source)?;
        let ann = encode(&mut g, store, x, &[len], &self.encoder.fwd, &self.encoder.bwd)?;
        let sv = self.decoder.attention.prepare(&mut g, store, ann, &[len])?;
        let h0 = self.decoder.initial_state(&mut g, store, &sv, &[len])?;
        Ok(EncodedSource {
            annotations: g.value(ann).to_vec(),
            projected: g.value(sv.projected).to_vec(),
            len,
            init: g.value(h0).to_vec(),
        })
    }

    /// Advance `prev.len()` hypotheses over the same source by one token.
    pub fn step(&self, enc: &EncodedSource<F>, prev: &[u32], states: &[&[F]]) -> Result<StepOutput<F>> {
        let k = prev.len();
        let hd = self.config.dec_hidden;
        if k == 0 || states.len() != k || states.iter().any(|s| s.len() != hd) {
            return Err(Error::contract(format!(
                "step needs one {hd}-dim state per previous token ({k} tokens, {} states)",
                states.len()
            )));
        }
        let store = &self.store;
        let d = self.config.annotation_dim();
        let a = self.config.effective_alignment_dim();
        let s = enc.len;
        let mut g = Graph::inference();
        let tile = |src: &[F], width: usize| -> Vec<F> {
            let mut out = Vec::with_capacity(s * k * width);
            for pos in 0..s {
                for _ in 0..k {
                    out.extend_from_slice(&src[pos * width..(pos + 1) * width]);
                }
            }
            out
        };
        let annotations = g.constant(&[s * k, d], tile(&enc.annotations, d))?;
        let projected = g.constant(&[s * k, a], tile(&enc.projected, a))?;
        let score_mask = g.zeros(&[k, s]);
        let src = SourceVars {
            annotations,
            projected,
            score_mask,
            batch: k,
            len: s,
        };
        let h = g.constant(&[k, hd], states.iter().flat_map(|s| s.iter().copied()).collect())?;
        let y = self.embeddings.embed(&mut g, store, prev, EmbeddingRole::Feedback)?;
        let st = self.decoder.step(&mut g, store, y, h, &src)?;
        let o = self.head.hidden(&mut g, store, st.h, y, st.context)?;
        let logits = self.head.project(&mut g, store, o)?;
        let v = self.config.tgt_vocab;
        let mask = lemma_mask(v);
        let logprobs = g.value(logits).chunks(v).map(|r| masked_log_softmax(r, &mask)).collect();
        let factor_logprobs = match &self.factor {
            Some(fh) => {
                let fo = match &fh.separate {
                    Some(sep) => sep.hidden(&mut g, store, st.h, y, st.context)?,
                    None => o,
                };
                let fl = project_with(&mut g, store, fo, fh.w_o, fh.b_o)?;
                let fv = self.config.factor_vocab;
                let fmask = factor_mask(fv);
                Some(g.value(fl).chunks(fv).map(|r| masked_log_softmax(r, &fmask)).collect())
            }
            None => None,
        };
        Ok(StepOutput {
            logprobs,
            factor_logprobs,
            states: g.value(st.h).chunks(hd).map(<[F]>::to_vec).collect(),
            attention: g.value(st.weights).chunks(s).map(<[F]>::to_vec).collect(),
        })
    }

    /// Teacher-forced `ln P(tgt, eos | src)`, adding factor log-probs of
    /// the non-eos steps when `factors` is given.
    pub fn sequence_logprob(&self, src: &[u32], tgt: &[u32], factors: Option<&[u32]>) -> Result<f64> {
        if let Some(f) = factors {
            if f.len() != tgt.len() {
                return Err(Error::contract("factor stream length differs from lemma stream length"));
            }
        }
        let enc = self.encode_source(src)?;
        let mut state = enc.init.clone();
        let mut prev = BOS;
        let mut total = 0.0;
        for t in 0..=tgt.len() {
            let out = self.step(&enc, &[prev], &[&state])?;
            let next = tgt.get(t).copied().unwrap_or(EOS);
            total += out.logprobs[0]
                .get(next as usize)
                .copied()
                .ok_or(Error::Vocab {
                    id: next,
                    size: self.config.tgt_vocab,
                })?;
            if let (Some(f), Some(fl)) = (factors, &out.factor_logprobs) {
                if t < tgt.len() {
                    total += fl[0].get(f[t] as usize).copied().unwrap_or(f64::NEG_INFINITY);
                }
            }
            state = out.states.into_iter().next().expect("one state");
            prev = next;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests;
