//! Greedy, beam and ensemble search, n-best lists and reinflection.

mod nbest;
mod reinflect;

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::corpus::{
    assemble_bt_corpus, detokenize_bpe, format_factored_sentence, join_factored_bpe, tokenize, ParallelCorpus, BOS, EOS,
};
use crate::error::{Error, Result};
use crate::model::{EncodedSource, ModelVocabs, Seq2SeqModel};
use crate::tensor::Real;

pub use nbest::{format_nbest_line, group_nbest, parse_nbest_line, read_nbest, write_nbest, NBestEntry};
pub use reinflect::{reinflect, ReinflectionDictionary, Reinflection, DEFAULT_EXPANSION_CAP};

/// How member distributions of an ensemble are merged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combine {
    /// Mean of probabilities.
    Arithmetic,
    /// Renormalized mean of log-probabilities.
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOptions {
    pub beam: usize,
    /// Decoding steps before unfinished hypotheses are closed.
    pub max_len: usize,
    pub length_norm: bool,
    /// Factor candidates per lemma in factored search.
    pub factor_k: usize,
    pub combine: Combine,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        DecodeOptions {
            beam: 12,
            max_len: 100,
            length_norm: true,
            factor_k: 3,
            combine: Combine::Arithmetic,
        }
    }
}

impl DecodeOptions {
    fn check(&self) -> Result<()> {
        if self.beam == 0 || self.max_len == 0 || self.factor_k == 0 {
            return Err(Error::contract("beam, max_len and factor_k must be at least 1"));
        }
        Ok(())
    }
}

/// A finished output sequence. `tokens` ends with eos; for factored models
/// `factors` has the same length and carries eos at the last position.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<u32>,
    pub factors: Option<Vec<u32>>,
    pub step_logprobs: Vec<f64>,
    pub logprob_sum: f64,
    /// Closed at `max_len` rather than by predicting eos; the appended eos
    /// contributes nothing to the score.
    pub forced: bool,
}

impl Hypothesis {
    pub fn score(&self, length_norm: bool) -> f64 {
        if length_norm {
            self.logprob_sum / self.tokens.len() as f64
        } else {
            self.logprob_sum
        }
    }

    /// Output ids without the trailing eos.
    pub fn words(&self) -> &[u32] {
        &self.tokens[..self.tokens.len() - 1]
    }

    pub fn factor_words(&self) -> Option<&[u32]> {
        self.factors.as_deref().map(|f| &f[..f.len() - 1])
    }

    /// Output tokens: words, or escaped `lemma|factors` tokens for factored
    /// models. Subword joins are undone unless `keep_bpe`.
    pub fn render(&self, vocabs: &ModelVocabs, keep_bpe: bool) -> Vec<String> {
        let words = vocabs.tgt.decode(self.words());
        match (&vocabs.factor, self.factor_words()) {
            (Some(fv), Some(f)) => {
                let factors = fv.decode(f);
                let (l, f) = if keep_bpe {
                    (words, factors)
                } else {
                    join_factored_bpe(&words, &factors)
                };
                tokenize(&format_factored_sentence(&l, &f))
            }
            _ if keep_bpe => words,
            _ => detokenize_bpe(&words).0,
        }
    }
}

/// Merge per-member log-probability rows into one distribution.
pub fn combine_logprobs(rows: &[&[f64]], combine: Combine) -> Vec<f64> {
    if rows.len() == 1 {
        return rows[0].to_vec();
    }
    let n = rows.len() as f64;
    let v = rows[0].len();
    match combine {
        Combine::Arithmetic => (0..v)
            .map(|j| {
                let max = rows.iter().map(|r| r[j]).fold(f64::NEG_INFINITY, f64::max);
                if max == f64::NEG_INFINITY {
                    return max;
                }
                let s: f64 = rows.iter().map(|r| (r[j] - max).exp()).sum();
                max + (s / n).ln()
            })
            .collect(),
        Combine::Geometric => {
            let mean: Vec<f64> = (0..v).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
            let max = mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + mean.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            mean.iter().map(|x| x - lse).collect()
        }
    }
}

/// One or more models decoding together; a single model is an ensemble
/// of one.
#[derive(Debug, Clone)]
pub struct Ensemble<'m, F: Real> {
    members: Vec<&'m Seq2SeqModel<F>>,
    pub combine: Combine,
}

struct Frontier<F> {
    encs: Vec<EncodedSource<F>>,
}

struct StepResult<F> {
    lemma: Vec<Vec<f64>>,
    factor: Option<Vec<Vec<f64>>>,
    /// Per hypothesis, per member.
    states: Vec<Vec<Vec<F>>>,
}

impl<'m, F: Real> Ensemble<'m, F> {
    pub fn new(members: Vec<&'m Seq2SeqModel<F>>, combine: Combine) -> Result<Self> {
        let first = *members.first().ok_or_else(|| Error::contract("an ensemble needs at least one model"))?;
        for m in &members[1..] {
            let same_vocab = match (&first.vocabs, &m.vocabs) {
                (Some(a), Some(b)) => a.tgt == b.tgt && a.factor == b.factor,
                (None, None) => true,
                _ => false,
            };
            if m.config.tgt_vocab != first.config.tgt_vocab
                || m.is_factored() != first.is_factored()
                || m.config.factor_vocab != first.config.factor_vocab
                || !same_vocab
            {
                return Err(Error::config("ensemble members must share the target vocabulary"));
            }
        }
        Ok(Ensemble { members, combine })
    }

    pub fn single(model: &'m Seq2SeqModel<F>) -> Self {
        Ensemble {
            members: vec![model],
            combine: Combine::Arithmetic,
        }
    }

    pub fn members(&self) -> &[&'m Seq2SeqModel<F>] {
        &self.members
    }

    pub fn is_factored(&self) -> bool {
        self.members[0].is_factored()
    }

    fn start(&self, src: &[u32]) -> Result<(Frontier<F>, Vec<Vec<F>>)> {
        let encs = self
            .members
            .iter()
            .map(|m| m.encode_source(src))
            .collect::<Result<Vec<_>>>()?;
        let init = encs.iter().map(|e| e.initial_state().to_vec()).collect();
        Ok((Frontier { encs }, init))
    }

    fn advance(&self, fr: &Frontier<F>, prev: &[u32], states: &[&Vec<Vec<F>>]) -> Result<StepResult<F>> {
        let k = prev.len();
        let mut outs = Vec::with_capacity(self.members.len());
        for (mi, m) in self.members.iter().enumerate() {
            let st: Vec<&[F]> = states.iter().map(|s| s[mi].as_slice()).collect();
            outs.push(m.step(&fr.encs[mi], prev, &st)?);
        }
        let lemma = (0..k)
            .map(|h| {
                let rows: Vec<&[f64]> = outs.iter().map(|o| o.logprobs[h].as_slice()).collect();
                combine_logprobs(&rows, self.combine)
            })
            .collect();
        let factor = if self.is_factored() {
            Some(
                (0..k)
                    .map(|h| {
                        let rows: Vec<&[f64]> = outs
                            .iter()
                            .map(|o| o.factor_logprobs.as_ref().expect("factored member")[h].as_slice())
                            .collect();
                        combine_logprobs(&rows, self.combine)
                    })
                    .collect(),
            )
        } else {
            None
        };
        let mut states: Vec<Vec<Vec<F>>> = vec![Vec::with_capacity(outs.len()); k];
        for o in outs {
            for (h, s) in o.states.into_iter().enumerate() {
                states[h].push(s);
            }
        }
        Ok(StepResult { lemma, factor, states })
    }
}

/// Best-first ordering: higher score, then earlier parent, then lower id.
fn rank(a: &(f64, usize, u32, u32), b: &(f64, usize, u32, u32)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then(a.1.cmp(&b.1))
        .then(a.2.cmp(&b.2))
        .then(a.3.cmp(&b.3))
}

/// Indices of the `n` largest finite entries, ties to the lower index.
fn top_n(row: &[f64], n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).filter(|&j| row[j].is_finite()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
    idx.truncate(n);
    idx
}

/// Pick the highest-scoring next token at every step.
pub fn greedy_decode<F: Real>(ens: &Ensemble<'_, F>, src: &[u32], max_len: usize) -> Result<Hypothesis> {
    if ens.is_factored() {
        let opts = DecodeOptions {
            beam: 1,
            max_len,
            length_norm: false,
            factor_k: 1,
            combine: ens.combine,
        };
        return Ok(factored_beam_decode(ens, src, &opts)?.remove(0));
    }
    if max_len == 0 {
        return Err(Error::contract("max_len must be at least 1"));
    }
    let (fr, mut state) = ens.start(src)?;
    let mut tokens = Vec::new();
    let mut lps = Vec::new();
    let mut sum = 0.0;
    let mut prev = BOS;
    for _ in 0..max_len {
        let mut out = ens.advance(&fr, &[prev], &[&state])?;
        let row = &out.lemma[0];
        let mut best = (f64::NEG_INFINITY, EOS);
        for (j, &lp) in row.iter().enumerate() {
            if lp > best.0 {
                best = (lp, j as u32);
            }
        }
        tokens.push(best.1);
        lps.push(best.0);
        sum += best.0;
        if best.1 == EOS {
            return Ok(Hypothesis {
                tokens,
                factors: None,
                step_logprobs: lps,
                logprob_sum: sum,
                forced: false,
            });
        }
        state = out.states.swap_remove(0);
        prev = best.1;
    }
    tokens.push(EOS);
    lps.push(0.0);
    Ok(Hypothesis {
        tokens,
        factors: None,
        step_logprobs: lps,
        logprob_sum: sum,
        forced: true,
    })
}

struct Live<F> {
    tokens: Vec<u32>,
    factors: Vec<u32>,
    lps: Vec<f64>,
    sum: f64,
    state: Vec<Vec<F>>,
}

fn search<F: Real>(ens: &Ensemble<'_, F>, src: &[u32], opts: &DecodeOptions, factored: bool) -> Result<Vec<Hypothesis>> {
    opts.check()?;
    let (fr, init) = ens.start(src)?;
    let mut live = vec![Live {
        tokens: Vec::new(),
        factors: Vec::new(),
        lps: Vec::new(),
        sum: 0.0,
        state: init,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    let finish = |h: Live<F>, forced: bool| Hypothesis {
        factors: factored.then_some(h.factors),
        tokens: h.tokens,
        step_logprobs: h.lps,
        logprob_sum: h.sum,
        forced,
    };
    for _ in 0..opts.max_len {
        if live.is_empty() || finished.len() >= opts.beam {
            break;
        }
        let cap = opts.beam - finished.len();
        let prev: Vec<u32> = live.iter().map(|h| h.tokens.last().copied().unwrap_or(BOS)).collect();
        let states: Vec<&Vec<Vec<F>>> = live.iter().map(|h| &h.state).collect();
        let out = ens.advance(&fr, &prev, &states)?;
        // (score, parent, lemma, factor)
        let mut cands: Vec<(f64, usize, u32, u32)> = Vec::new();
        for (i, h) in live.iter().enumerate() {
            let row = &out.lemma[i];
            if !factored {
                for j in top_n(row, cap) {
                    cands.push((h.sum + row[j], i, j as u32, 0));
                }
                continue;
            }
            let frow = &out.factor.as_ref().expect("factored step")[i];
            let ftop = top_n(frow, opts.factor_k);
            for j in top_n(row, opts.beam) {
                if j as u32 == EOS {
                    cands.push((h.sum + row[j], i, EOS, EOS));
                } else {
                    for &f in &ftop {
                        cands.push((h.sum + row[j] + frow[f], i, j as u32, f as u32));
                    }
                }
            }
        }
        cands.sort_by(rank);
        cands.truncate(cap);
        let mut next = Vec::with_capacity(cands.len());
        for (score, i, tok, fac) in cands {
            let h = &live[i];
            let step = score - h.sum;
            let mut tokens = h.tokens.clone();
            tokens.push(tok);
            let mut factors = h.factors.clone();
            if factored {
                factors.push(fac);
            }
            let mut lps = h.lps.clone();
            lps.push(step);
            let nh = Live {
                tokens,
                factors,
                lps,
                sum: score,
                state: out.states[i].clone(),
            };
            if tok == EOS {
                finished.push(finish(nh, false));
            } else {
                next.push(nh);
            }
        }
        live = next;
    }
    if finished.len() < opts.beam {
        for mut h in live {
            h.tokens.push(EOS);
            if factored {
                h.factors.push(EOS);
            }
            h.lps.push(0.0);
            finished.push(finish(h, true));
        }
    }
    finished.sort_by(|a, b| b.score(opts.length_norm).total_cmp(&a.score(opts.length_norm)));
    finished.truncate(opts.beam);
    Ok(finished)
}

/// Beam search over target tokens; returns up to `beam` hypotheses, best
/// first under the final ranking.
pub fn beam_decode<F: Real>(ens: &Ensemble<'_, F>, src: &[u32], opts: &DecodeOptions) -> Result<Vec<Hypothesis>> {
    if ens.is_factored() {
        return Err(Error::contract("factored models decode with factored_beam_decode"));
    }
    search(ens, src, opts, false)
}

/// Beam search emitting lemma and factor streams in lockstep. Each live
/// hypothesis proposes its top `beam` lemmas paired with its top
/// `factor_k` factors; eos takes no factor score.
pub fn factored_beam_decode<F: Real>(
    ens: &Ensemble<'_, F>,
    src: &[u32],
    opts: &DecodeOptions,
) -> Result<Vec<Hypothesis>> {
    if !ens.is_factored() {
        return Err(Error::contract("factored search needs a factored model"));
    }
    search(ens, src, opts, true)
}

/// Beam or factored beam search, whichever fits the models.
pub fn decode<F: Real>(ens: &Ensemble<'_, F>, src: &[u32], opts: &DecodeOptions) -> Result<Vec<Hypothesis>> {
    search(ens, src, opts, ens.is_factored())
}

/// Translate up to `limit` target-language sentences with a reverse model
/// and append them to `original` as synthetic pairs. Output stays at the
/// subword level of the reverse model's vocabulary. Returns the corpus and
/// the number of sentences skipped.
pub fn backtranslate<F: Real>(
    reverse: &Ensemble<'_, F>,
    original: &ParallelCorpus,
    mono_target: &[Vec<String>],
    limit: usize,
    opts: &DecodeOptions,
    greedy: bool,
) -> Result<(ParallelCorpus, usize)> {
    let vocabs = reverse.members[0]
        .vocabs
        .as_ref()
        .ok_or_else(|| Error::contract("back-translation needs a model with vocabularies"))?;
    if reverse.is_factored() {
        return Err(Error::contract("back-translation needs a word-level reverse model"));
    }
    let n = limit.min(mono_target.len());
    let outputs: Vec<Result<Vec<String>>> = mono_target[..n]
        .par_iter()
        .map(|s| {
            let ids = vocabs.src.encode(s);
            let h = if greedy {
                greedy_decode(reverse, &ids, opts.max_len)?
            } else {
                decode(reverse, &ids, opts)?.swap_remove(0)
            };
            Ok(vocabs.tgt.decode(h.words()))
        })
        .collect();
    let mut outputs = outputs.into_iter();
    assemble_bt_corpus(original, mono_target, n, |_| outputs.next().expect("one output per sentence"))
}

/// Decode many sentences on the current rayon pool, preserving order.
pub fn decode_all<F: Real>(
    ens: &Ensemble<'_, F>,
    sources: &[Vec<u32>],
    opts: &DecodeOptions,
    greedy: bool,
) -> Result<Vec<Vec<Hypothesis>>> {
    sources
        .par_iter()
        .map(|s| {
            if greedy {
                greedy_decode(ens, s, opts.max_len).map(|h| vec![h])
            } else {
                decode(ens, s, opts)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests;
