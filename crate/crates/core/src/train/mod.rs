//! Optimization loop, early stopping and fine-tuning.

mod adam;

use std::fmt;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;

use crate::corpus::{batch_indices, detokenize_bpe};
use crate::decode::{decode_all, DecodeOptions, Ensemble};
use crate::error::{Error, Result};
use crate::model::{Example, ModelVocabs, Seq2SeqModel};
use crate::rerank::bleu;
use crate::rng::{sub_rng, Stream};
use crate::tensor::{clip_global_norm, Grads, Graph, ParamStore, Real};

pub use adam::{AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};

/// When to run validation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cadence {
    /// Every `f` of an epoch, rounded up to whole updates.
    EpochFraction(f64),
    Updates(usize),
}

impl Cadence {
    fn interval(self, batches_per_epoch: usize) -> usize {
        match self {
            Cadence::EpochFraction(f) => ((f * batches_per_epoch as f64).ceil() as usize).max(1),
            Cadence::Updates(n) => n.max(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    pub lr: f64,
    pub batch_size: usize,
    pub validate_every: Cadence,
    /// Non-improving validations tolerated before stopping.
    pub patience: usize,
    pub max_norm: f64,
    pub max_epochs: usize,
    pub max_updates: Option<usize>,
    /// Beam used for validation BLEU; 1 decodes greedily.
    pub valid_beam: usize,
    pub valid_max_len: usize,
    /// Beam for re-scoring the selected model once training stops.
    pub final_beam: Option<usize>,
    /// Abort on the first non-finite gradient instead of stopping as
    /// diverged.
    pub checked: bool,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            lr: 4e-4,
            batch_size: 64,
            validate_every: Cadence::EpochFraction(0.25),
            patience: 20,
            max_norm: 5.0,
            max_epochs: 100,
            max_updates: None,
            valid_beam: 1,
            valid_max_len: 100,
            final_beam: Some(12),
            checked: false,
        }
    }
}

impl TrainSchedule {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    fn check(&self) -> Result<()> {
        if self.batch_size == 0 || self.patience == 0 || self.valid_beam == 0 || self.valid_max_len == 0 {
            return Err(Error::config("batch_size, patience, valid_beam and valid_max_len must be at least 1"));
        }
        if !(self.lr > 0.0) || !(self.max_norm > 0.0) {
            return Err(Error::config("lr and max_norm must be positive"));
        }
        if let Cadence::EpochFraction(f) = self.validate_every {
            if !(f > 0.0) {
                return Err(Error::config("validation epoch fraction must be positive"));
            }
        }
        Ok(())
    }
}

/// Start point and overrides for continued training.
#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneSpec {
    pub init_checkpoint: PathBuf,
    pub lr: f64,
    pub validate_every: usize,
}

impl FinetuneSpec {
    pub fn new(init_checkpoint: impl Into<PathBuf>) -> Self {
        FinetuneSpec {
            init_checkpoint: init_checkpoint.into(),
            lr: 1e-4,
            validate_every: 5000,
        }
    }
}

/// Direction in which the validation score improves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    HigherIsBetter,
    LowerIsBetter,
}

impl Metric {
    fn improves(self, new: f64, best: Option<f64>) -> bool {
        match best {
            None => new.is_finite(),
            Some(b) => match self {
                Metric::HigherIsBetter => new > b,
                Metric::LowerIsBetter => new < b,
            },
        }
    }
}

/// One validation record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub update: usize,
    pub epoch: f64,
    /// Mean training loss since the previous validation.
    pub loss: f64,
    pub valid: f64,
    pub best: f64,
}

impl fmt::Display for LogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}\t{:.2}\t{:.4}\t{:.2}\t{:.2}",
            self.update, self.epoch, self.loss, self.valid, self.best
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Patience,
    MaxEpochs,
    MaxUpdates,
    /// A loss or gradient went non-finite; the best model so far is kept.
    Diverged,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<M> {
    pub best: M,
    pub best_score: Option<f64>,
    /// Parameters when training stopped.
    pub last: M,
    pub log: Vec<LogEntry>,
    pub stop: StopReason,
    pub updates: usize,
    /// Validation score of `best` under `final_beam`, when requested.
    pub final_score: Option<f64>,
}

/// Anything the loop can optimize.
pub trait Trainable<F: Real>: Clone {
    type Item: Clone + Sync;

    fn params(&self) -> &ParamStore<F>;
    fn params_mut(&mut self) -> &mut ParamStore<F>;

    /// Training loss of a batch and the gradient of every parameter it
    /// touches, with dropout drawn from `dropout`.
    fn loss_and_grads(&self, batch: &[Self::Item], dropout: &mut ChaCha8Rng) -> Result<(f64, Grads<F>)>;

    /// Length key used to bucket similar items into a batch.
    fn length_key(item: &Self::Item) -> (usize, usize);
}

impl<F: Real> Trainable<F> for Seq2SeqModel<F> {
    type Item = Example;

    fn params(&self) -> &ParamStore<F> {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.store
    }

    fn loss_and_grads(&self, batch: &[Example], dropout: &mut ChaCha8Rng) -> Result<(f64, Grads<F>)> {
        let mut g = Graph::new();
        let loss = self.forward_loss(&mut g, batch, Some(dropout))?;
        let value = g.value(loss)[0].as_f64();
        g.backward(loss)?;
        Ok((value, ParamStore::collect_grads(&g)))
    }

    fn length_key(item: &Example) -> (usize, usize) {
        (item.tgt.len(), item.src.len())
    }
}

/// Hooks called by [`fit`].
pub trait Observer<M> {
    fn validated(&mut self, _entry: &LogEntry, _model: &M, _improved: bool) -> Result<()> {
        Ok(())
    }
}

impl<M> Observer<M> for () {}

/// Writes the model to a path every time validation improves.
pub struct SaveBest<'a>(pub &'a Path);

impl<F: Real> Observer<Seq2SeqModel<F>> for SaveBest<'_> {
    fn validated(&mut self, entry: &LogEntry, model: &Seq2SeqModel<F>, improved: bool) -> Result<()> {
        if improved {
            log::info!("saving new best ({:.2}) to {}", entry.valid, self.0.display());
            model.save(self.0)?;
        }
        Ok(())
    }
}

/// Shuffled minibatch Adam with global-norm clipping, validating on a
/// fixed cadence and stopping after `patience` validations without strict
/// improvement.
#[allow(clippy::too_many_arguments)]
pub fn fit<F, M, V>(
    model: M,
    data: &[M::Item],
    weights: &[usize],
    schedule: &TrainSchedule,
    seed: u64,
    metric: Metric,
    mut validate: V,
    observer: &mut dyn Observer<M>,
) -> Result<TrainOutcome<M>>
where
    F: Real,
    M: Trainable<F>,
    V: FnMut(&M) -> Result<f64>,
{
    schedule.check()?;
    if data.is_empty() {
        return Err(Error::contract("training data is empty"));
    }
    let keys: Vec<(usize, usize)> = data.iter().map(M::length_key).collect();
    let mut shuffle = sub_rng(seed, Stream::Shuffle);
    let mut dropout = sub_rng(seed, Stream::Dropout);
    let mut adam = AdamState::new(model.params(), schedule.lr);
    let mut model = model;
    let mut best = model.clone();
    let mut best_score: Option<f64> = None;
    let mut log = Vec::new();
    let mut bad = 0;
    let mut updates = 0;
    let mut loss_sum = 0.0;
    let mut loss_n = 0usize;
    let mut validated_at = 0;
    let mut stop = StopReason::MaxEpochs;
    let mut position = 0.0;

    let mut run_validation = |model: &M,
                              updates: usize,
                              epoch: f64,
                              loss: f64,
                              best: &mut M,
                              best_score: &mut Option<f64>,
                              bad: &mut usize,
                              log: &mut Vec<LogEntry>|
     -> Result<bool> {
        let score = validate(model)?;
        let improved = metric.improves(score, *best_score);
        if improved {
            *best_score = Some(score);
            *best = model.clone();
            *bad = 0;
        } else {
            *bad += 1;
        }
        let entry = LogEntry {
            update: updates,
            epoch,
            loss,
            valid: score,
            best: best_score.unwrap_or(f64::NAN),
        };
        log::info!("{entry}");
        observer.validated(&entry, model, improved)?;
        log.push(entry);
        Ok(*bad >= schedule.patience)
    };

    'epochs: for epoch in 0..schedule.max_epochs {
        if schedule.max_updates.is_some_and(|m| updates >= m) {
            stop = StopReason::MaxUpdates;
            break;
        }
        let batches = batch_indices(&keys, weights, schedule.batch_size, &mut shuffle)?;
        let every = schedule.validate_every.interval(batches.len());
        for (bi, idx) in batches.iter().enumerate() {
            let batch: Vec<M::Item> = idx.iter().map(|&i| data[i].clone()).collect();
            let (loss, mut grads) = model.loss_and_grads(&batch, &mut dropout)?;
            let norm = {
                let mut slices: Vec<&mut [F]> = grads.iter_mut().map(|(_, g)| g.as_mut_slice()).collect();
                clip_global_norm(&mut slices, schedule.max_norm)
            };
            if !loss.is_finite() || !norm.is_finite() {
                if schedule.checked {
                    let op = grads
                        .iter()
                        .find(|(_, g)| g.iter().any(|x| !x.is_finite()))
                        .map_or("training loss".to_string(), |(id, _)| {
                            format!("gradient of {}", model.params().name(*id))
                        });
                    return Err(Error::NonFinite { op });
                }
                log::warn!("training diverged at update {} (loss {loss}, gradient norm {norm})", updates + 1);
                stop = StopReason::Diverged;
                break 'epochs;
            }
            adam.step(model.params_mut(), &grads, schedule.checked)?;
            updates += 1;
            loss_sum += loss;
            loss_n += 1;
            position = epoch as f64 + (bi + 1) as f64 / batches.len() as f64;
            if updates % every == 0 {
                let done = run_validation(
                    &model,
                    updates,
                    position,
                    loss_sum / loss_n as f64,
                    &mut best,
                    &mut best_score,
                    &mut bad,
                    &mut log,
                )?;
                validated_at = updates;
                loss_sum = 0.0;
                loss_n = 0;
                if done {
                    stop = StopReason::Patience;
                    break 'epochs;
                }
            }
            if schedule.max_updates.is_some_and(|m| updates >= m) {
                stop = StopReason::MaxUpdates;
                break 'epochs;
            }
        }
    }
    if stop != StopReason::Patience && stop != StopReason::Diverged && updates > validated_at {
        run_validation(
            &model,
            updates,
            position,
            loss_sum / loss_n.max(1) as f64,
            &mut best,
            &mut best_score,
            &mut bad,
            &mut log,
        )?;
    }
    Ok(TrainOutcome {
        best,
        best_score,
        last: model,
        log,
        stop,
        updates,
        final_score: None,
    })
}

/// Source ids and word-level references for BLEU validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidSet {
    pub sources: Vec<Vec<u32>>,
    pub references: Vec<Vec<String>>,
}

impl ValidSet {
    /// Encode tokenized sources with the model vocabulary; references
    /// have their subword joins undone.
    pub fn new(vocabs: &ModelVocabs, sources: &[Vec<String>], references: &[Vec<String>]) -> Result<Self> {
        if sources.is_empty() || sources.len() != references.len() {
            return Err(Error::contract("validation set needs matching non-empty source and reference lists"));
        }
        Ok(ValidSet {
            sources: sources.iter().map(|s| vocabs.src.encode(s)).collect(),
            references: references.iter().map(|r| detokenize_bpe(r).0).collect(),
        })
    }
}

/// Word-level output of a decoded hypothesis: target ids to tokens, then
/// subword joins. Factored models yield their lemma stream.
pub fn hypothesis_words(vocabs: &ModelVocabs, ids: &[u32]) -> Vec<String> {
    detokenize_bpe(&vocabs.tgt.decode(ids)).0
}

/// Corpus BLEU of the model's translations of `valid`.
pub fn validation_bleu<F: Real>(model: &Seq2SeqModel<F>, valid: &ValidSet, beam: usize, max_len: usize) -> Result<f64> {
    let vocabs = model
        .vocabs
        .as_ref()
        .ok_or_else(|| Error::contract("validation needs a model with vocabularies"))?;
    let opts = DecodeOptions {
        beam,
        max_len,
        ..DecodeOptions::default()
    };
    let ens = Ensemble::single(model);
    let hyps = decode_all(&ens, &valid.sources, &opts, beam == 1 && !model.is_factored())?;
    let words: Vec<Vec<String>> = hyps.iter().map(|h| hypothesis_words(vocabs, h[0].words())).collect();
    Ok(bleu(&words, &valid.references)?.bleu)
}

/// Train a translation model with BLEU early stopping.
pub fn train<F: Real>(
    model: Seq2SeqModel<F>,
    data: &[Example],
    weights: &[usize],
    valid: &ValidSet,
    schedule: &TrainSchedule,
    seed: u64,
    observer: &mut dyn Observer<Seq2SeqModel<F>>,
) -> Result<TrainOutcome<Seq2SeqModel<F>>> {
    let (beam, max_len) = (schedule.valid_beam, schedule.valid_max_len);
    let mut out = fit(
        model,
        data,
        weights,
        schedule,
        seed,
        Metric::HigherIsBetter,
        |m: &Seq2SeqModel<F>| validation_bleu(m, valid, beam, max_len),
        observer,
    )?;
    if let Some(b) = schedule.final_beam {
        let score = validation_bleu(&out.best, valid, b, max_len)?;
        log::info!("selected model: BLEU {score:.2} with beam {b}");
        out.final_score = Some(score);
    }
    Ok(out)
}

/// Continue training a saved model at the fine-tuning rate and cadence.
/// `data_vocabs`, when given, must equal the checkpoint's vocabularies.
#[allow(clippy::too_many_arguments)]
pub fn finetune<F: Real>(
    spec: &FinetuneSpec,
    data: &[Example],
    weights: &[usize],
    data_vocabs: Option<&ModelVocabs>,
    valid: &ValidSet,
    schedule: &TrainSchedule,
    seed: u64,
    observer: &mut dyn Observer<Seq2SeqModel<F>>,
) -> Result<TrainOutcome<Seq2SeqModel<F>>> {
    let model = Seq2SeqModel::<F>::load(&spec.init_checkpoint)?;
    if let Some(v) = data_vocabs {
        if model.vocabs.as_ref() != Some(v) {
            return Err(Error::config(format!(
                "vocabularies of the fine-tuning data differ from those in {}",
                spec.init_checkpoint.display()
            )));
        }
    }
    let schedule = TrainSchedule {
        lr: spec.lr,
        validate_every: Cadence::Updates(spec.validate_every),
        ..schedule.clone()
    };
    train(model, data, weights, valid, &schedule, seed, observer)
}
