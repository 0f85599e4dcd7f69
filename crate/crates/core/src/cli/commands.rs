use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use knmt::corpus::{
    bpe_learn, detokenize_bpe, factored_bpe_apply, filter_corpus, format_factored_sentence, join_factored_bpe,
    parse_factored_sentence, read_sentences, write_sentences, BpeOptions, ParallelCorpus, SubwordModel,
    Vocabulary,
};
use knmt::decode::{
    backtranslate, decode_all, group_nbest, read_nbest, reinflect, write_nbest, Ensemble, NBestEntry,
    ReinflectionDictionary,
};
use knmt::model::{ModelVocabs, Seq2SeqModel};
use knmt::rerank::{
    add_features, bleu, dev_bleu, lm_train, rerank, tune_weights, word_count, LanguageModel, RerankWeights, Scorer,
};
use knmt::train::{finetune, train, FinetuneSpec, LogEntry, SaveBest, StopReason, ValidSet};
use knmt::layers::TyingMode;
use rayon::prelude::*;

use super::{Cli, Command, DataArgs, FeatureArgs, ModelArgs, RunConfig};

type Sentences = Vec<Vec<String>>;
type FeatureFn<'a> = Box<dyn Fn(&[String]) -> knmt::Result<f64> + Sync + 'a>;

pub fn dispatch(cli: &Cli, cfg: &RunConfig) -> Result<()> {
    match &cli.command {
        Command::Train { data, output, log, seeds } => cmd_train(cfg, data, output, log.as_deref(), seeds),
        Command::Finetune { init, data, output, log } => cmd_finetune(cli, cfg, init, data, output, log.as_deref()),
        Command::Translate {
            models,
            input,
            output,
            greedy,
            nbest,
            keep_bpe,
        } => cmd_translate(cfg, models, input, output.as_deref(), *greedy, nbest.as_deref(), *keep_bpe),
        Command::Backtranslate {
            models,
            train,
            mono,
            limit,
            greedy,
            output,
        } => cmd_backtranslate(cfg, models, train, mono, *limit, *greedy, output),
        Command::BpeLearn {
            input,
            merges,
            factored,
            output,
        } => cmd_bpe_learn(cfg, input, *merges, *factored, output),
        Command::BpeApply {
            codes,
            input,
            output,
            factored,
        } => cmd_bpe_apply(codes, input, output.as_deref(), *factored),
        Command::ScoreBleu { hyp, reference, detok } => cmd_score_bleu(hyp, reference, *detok),
        Command::LmTrain {
            input,
            valid,
            output,
            word_level,
            log,
        } => cmd_lm_train(cfg, input, valid, output, *word_level, log.as_deref()),
        Command::LmScore {
            model,
            input,
            output,
            word_level,
        } => cmd_lm_score(model, input, output.as_deref(), *word_level),
        Command::Rerank {
            nbest,
            weights,
            features,
            output,
            nbest_out,
            keep_bpe,
        } => cmd_rerank(nbest, weights, features, output.as_deref(), nbest_out.as_deref(), *keep_bpe),
        Command::TuneWeights {
            nbest,
            reference,
            features,
            names,
            output,
        } => cmd_tune(cfg, nbest, reference, features, names, output),
        Command::Reinflect {
            dict,
            tagged,
            save_dict,
            input,
            output,
        } => cmd_reinflect(cfg, dict.as_deref(), tagged.as_deref(), save_dict.as_deref(), input, output.as_deref()),
        Command::Params => cmd_params(cfg),
    }
}

fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_os_string();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write_lines(path: Option<&Path>, lines: &[String]) -> Result<()> {
    let mut text = lines.join("\n");
    if !lines.is_empty() {
        text.push('\n');
    }
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => std::io::stdout().write_all(text.as_bytes()).context("cannot write to stdout"),
    }
}

fn read_factored(path: &Path) -> Result<(Sentences, Sentences)> {
    let mut lemmas = Vec::new();
    let mut factors = Vec::new();
    for (i, line) in read_text(path)?.lines().enumerate() {
        let (l, f) = parse_factored_sentence(line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        lemmas.push(l);
        factors.push(f);
    }
    Ok((lemmas, factors))
}

fn training_corpus(cfg: &RunConfig, data: &DataArgs, factored: bool) -> Result<ParallelCorpus> {
    let corpus = match (&data.train, &data.manifest) {
        (Some(p), None) => ParallelCorpus::read(&with_ext(p, "src"), &with_ext(p, "tgt"), factored)?,
        (None, Some(m)) => ParallelCorpus::read_manifest(m, factored)?,
        _ => bail!("give exactly one of --train and --manifest"),
    };
    let ratio = (cfg.max_length_ratio > 0.0).then_some(cfg.max_length_ratio);
    let kept = filter_corpus(&corpus, cfg.min_sentence_len, cfg.max_sentence_len, ratio)?;
    log::info!("training pairs: {} read, {} kept after length filtering", corpus.len(), kept.len());
    ensure!(!kept.is_empty(), "no training pairs left after length filtering");
    Ok(kept)
}

fn validation_set(vocabs: &ModelVocabs, prefix: &Path, factored: bool) -> Result<ValidSet> {
    let src = read_sentences(&with_ext(prefix, "src"))?;
    let tgt_path = with_ext(prefix, "tgt");
    let refs = if factored {
        read_factored(&tgt_path)?.0
    } else {
        read_sentences(&tgt_path)?
    };
    Ok(ValidSet::new(vocabs, &src, &refs)?)
}

fn cap(n: usize) -> Option<usize> {
    (n > 0).then_some(n)
}

fn build_vocabs(cfg: &RunConfig, corpus: &ParallelCorpus) -> ModelVocabs {
    let m = &cfg.model;
    if m.tying == TyingMode::Tied3 {
        let limit = cap(m.src_vocab.max(m.tgt_vocab));
        return ModelVocabs::build(corpus, true, limit);
    }
    ModelVocabs {
        src: Vocabulary::build(corpus.src.iter().map(Vec::as_slice), cap(m.src_vocab)),
        tgt: Vocabulary::build(corpus.tgt.iter().map(Vec::as_slice), cap(m.tgt_vocab)),
        factor: corpus
            .factors
            .as_ref()
            .map(|f| Vocabulary::build(f.iter().map(Vec::as_slice), None)),
    }
}

fn write_log(path: Option<&Path>, log: &[LogEntry]) -> Result<()> {
    if let Some(p) = path {
        let mut lines = vec!["update\tepoch\tloss\tvalid\tbest".to_string()];
        lines.extend(log.iter().map(ToString::to_string));
        write_lines(Some(p), &lines)?;
    }
    Ok(())
}

fn replica_path(output: &Path, seed: u64) -> PathBuf {
    let stem = output.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let name = match output.extension() {
        Some(e) => format!("{stem}.seed{seed}.{}", e.to_string_lossy()),
        None => format!("{stem}.seed{seed}"),
    };
    output.with_file_name(name)
}

fn report(
    output: &Path,
    outcome: &knmt::train::TrainOutcome<Seq2SeqModel<f32>>,
    log: Option<&Path>,
) -> Result<()> {
    outcome.best.save(output)?;
    write_log(log, &outcome.log)?;
    let best = outcome.best_score.map_or("n/a".to_string(), |b| format!("{b:.2}"));
    let mut line = format!(
        "{}: best valid BLEU {best} after {} updates, stopped by {:?}",
        output.display(),
        outcome.updates,
        outcome.stop
    );
    if let Some(f) = outcome.final_score {
        line.push_str(&format!(", final beam BLEU {f:.2}"));
    }
    println!("{line}");
    ensure!(
        outcome.stop != StopReason::Diverged,
        "training diverged; the best model so far was written to {}",
        output.display()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, data: &DataArgs, output: &Path, log: Option<&Path>, seeds: &[u64]) -> Result<()> {
    let factored = data.factored || cfg.model.factored;
    let corpus = training_corpus(cfg, data, factored)?;
    let vocabs = build_vocabs(cfg, &corpus);
    let mut config = cfg.model.clone();
    config.src_vocab = vocabs.src.len();
    config.tgt_vocab = vocabs.tgt.len();
    config.factored = factored;
    config.factor_vocab = vocabs.factor.as_ref().map_or(0, Vocabulary::len);
    log::info!(
        "vocabularies: source {}, target {}, factors {}",
        config.src_vocab,
        config.tgt_vocab,
        config.factor_vocab
    );
    let examples = vocabs.encode(&corpus)?;
    let valid = validation_set(&vocabs, &data.valid, factored)?;
    let run = |seed: u64, out: &Path| -> Result<_> {
        let model = Seq2SeqModel::<f32>::build(config.clone(), seed)?.with_vocabs(vocabs.clone())?;
        log::info!("model {} parameters, seed {seed}", model.count_params());
        Ok(train(model, &examples, &corpus.weights, &valid, &cfg.schedule, seed, &mut SaveBest(out))?)
    };
    if seeds.is_empty() {
        let outcome = run(cfg.seed, output)?;
        return report(output, &outcome, log);
    }
    let outcomes: Vec<Result<_>> = seeds
        .par_iter()
        .map(|&s| {
            let out = replica_path(output, s);
            run(s, &out).map(|o| (out, o))
        })
        .collect();
    for (r, &s) in outcomes.into_iter().zip(seeds) {
        let (out, o) = r?;
        let log_path = log.map(|l| replica_path(l, s));
        report(&out, &o, log_path.as_deref())?;
    }
    Ok(())
}

fn cmd_finetune(cli: &Cli, cfg: &RunConfig, init: &Path, data: &DataArgs, output: &Path, log: Option<&Path>) -> Result<()> {
    let base = Seq2SeqModel::<f32>::load(init).with_context(|| format!("cannot load {}", init.display()))?;
    if cli.config.is_some() {
        let ours = cfg.model.entries();
        for (k, v) in base.config.entries() {
            if matches!(k, "src_vocab" | "tgt_vocab" | "factor_vocab" | "dropout_p") {
                continue;
            }
            let mine = ours.iter().find(|(n, _)| *n == k).map(|(_, v)| v.as_str());
            ensure!(mine == Some(v.as_str()), "config {k} = {} does not match {} in {}", mine.unwrap_or("?"), v, init.display());
        }
    }
    let vocabs = base
        .vocabs
        .clone()
        .with_context(|| format!("{} has no vocabularies", init.display()))?;
    let factored = base.is_factored();
    ensure!(
        data.factored == factored,
        "{} is {}factored but the data is {}",
        init.display(),
        if factored { "" } else { "not " },
        if data.factored { "factored" } else { "not factored" }
    );
    let corpus = training_corpus(cfg, data, factored)?;
    let examples = vocabs.encode(&corpus)?;
    let valid = validation_set(&vocabs, &data.valid, factored)?;
    let spec = FinetuneSpec {
        lr: cfg.finetune_lr,
        validate_every: cfg.finetune_validate_every,
        ..FinetuneSpec::new(init)
    };
    let outcome = finetune::<f32>(
        &spec,
        &examples,
        &corpus.weights,
        None,
        &valid,
        &cfg.schedule,
        cfg.seed,
        &mut SaveBest(output),
    )?;
    report(output, &outcome, log)
}

fn checkpoint_paths(models: &ModelArgs) -> Result<Vec<PathBuf>> {
    match (&models.model, models.ensemble.is_empty()) {
        (Some(m), true) => Ok(vec![m.clone()]),
        (None, false) => Ok(models.ensemble.clone()),
        _ => bail!("give exactly one of --model and --ensemble"),
    }
}

fn load_models(models: &ModelArgs) -> Result<Vec<Seq2SeqModel<f32>>> {
    checkpoint_paths(models)?
        .iter()
        .map(|p| Seq2SeqModel::load(p).with_context(|| format!("cannot load {}", p.display())))
        .collect()
}

fn cmd_translate(
    cfg: &RunConfig,
    models: &ModelArgs,
    input: &Path,
    output: Option<&Path>,
    greedy: bool,
    nbest: Option<&Path>,
    keep_bpe: bool,
) -> Result<()> {
    let loaded = load_models(models)?;
    let ens = Ensemble::new(loaded.iter().collect(), cfg.decode.combine)?;
    let vocabs = loaded[0].vocabs.as_ref().context("checkpoint has no vocabularies")?;
    let sources: Vec<Vec<u32>> = read_sentences(input)?.iter().map(|s| vocabs.src.encode(s)).collect();
    let hyps = decode_all(&ens, &sources, &cfg.decode, greedy)?;
    let lines: Vec<String> = hyps.iter().map(|h| h[0].render(vocabs, keep_bpe).join(" ")).collect();
    write_lines(output, &lines)?;
    if let Some(path) = nbest {
        let entries: Vec<NBestEntry> = hyps
            .iter()
            .enumerate()
            .flat_map(|(i, list)| {
                list.iter().map(move |h| NBestEntry {
                    index: i,
                    tokens: h.render(vocabs, keep_bpe),
                    features: vec![("nmt".to_string(), h.logprob_sum)],
                    total: h.score(cfg.decode.length_norm),
                })
            })
            .collect();
        write_nbest(path, &entries)?;
    }
    Ok(())
}

fn cmd_backtranslate(
    cfg: &RunConfig,
    models: &ModelArgs,
    train: &Path,
    mono: &Path,
    limit: Option<usize>,
    greedy: bool,
    output: &Path,
) -> Result<()> {
    let loaded = load_models(models)?;
    let ens = Ensemble::new(loaded.iter().collect(), cfg.decode.combine)?;
    let original = ParallelCorpus::read(&with_ext(train, "src"), &with_ext(train, "tgt"), false)?;
    let mono = read_sentences(mono)?;
    let limit = limit.unwrap_or(mono.len());
    let (corpus, skipped) = backtranslate(&ens, &original, &mono, limit, &cfg.decode, greedy)?;
    if skipped > 0 {
        log::warn!("{skipped} monolingual sentences produced no translation and were skipped");
    }
    write_sentences(&with_ext(output, "src"), &corpus.src)?;
    write_sentences(&with_ext(output, "tgt"), &corpus.tgt)?;
    println!(
        "{} pairs ({} original, {} synthetic, {skipped} skipped)",
        corpus.len(),
        original.len(),
        corpus.len() - original.len()
    );
    Ok(())
}

fn cmd_bpe_learn(cfg: &RunConfig, inputs: &[PathBuf], merges: Option<usize>, factored: bool, output: &Path) -> Result<()> {
    let mut sentences = Vec::new();
    for p in inputs {
        if factored {
            sentences.extend(read_factored(p)?.0);
        } else {
            sentences.extend(read_sentences(p)?);
        }
    }
    let opts = BpeOptions {
        num_merges: merges.unwrap_or(cfg.bpe_merges),
        min_frequency: cfg.bpe_min_frequency,
    };
    let model = bpe_learn(sentences.iter().map(Vec::as_slice), opts)?;
    log::info!("learned {} merges", model.len());
    model.save(output)?;
    Ok(())
}

fn cmd_bpe_apply(codes: &Path, input: &Path, output: Option<&Path>, factored: bool) -> Result<()> {
    let model = SubwordModel::load(codes)?;
    let lines: Vec<String> = if factored {
        let (lemmas, factors) = read_factored(input)?;
        lemmas
            .iter()
            .zip(&factors)
            .map(|(l, f)| {
                let (l, f) = factored_bpe_apply(&model, l, f)?;
                Ok(format_factored_sentence(&l, &f))
            })
            .collect::<Result<_>>()?
    } else {
        read_sentences(input)?.iter().map(|s| model.apply(s).join(" ")).collect()
    };
    write_lines(output, &lines)
}

fn cmd_score_bleu(hyp: &Path, reference: &Path, detok: bool) -> Result<()> {
    let prep = |p: &Path| -> Result<Vec<Vec<String>>> {
        let s = read_sentences(p)?;
        Ok(if detok { s.iter().map(|x| detokenize_bpe(x).0).collect() } else { s })
    };
    let report = bleu(&prep(hyp)?, &prep(reference)?)?;
    println!("{report}");
    Ok(())
}

fn lm_sentences(path: &Path, word_level: bool) -> Result<Vec<Vec<String>>> {
    let s = read_sentences(path)?;
    Ok(if word_level { s.iter().map(|x| detokenize_bpe(x).0).collect() } else { s })
}

struct SaveLm<'a>(&'a Path);

impl knmt::train::Observer<LanguageModel<f32>> for SaveLm<'_> {
    fn validated(&mut self, entry: &LogEntry, model: &LanguageModel<f32>, improved: bool) -> knmt::Result<()> {
        if improved {
            log::info!("saving new best (ppl {:.2}) to {}", entry.valid, self.0.display());
            model.save(self.0)?;
        }
        Ok(())
    }
}

fn cmd_lm_train(cfg: &RunConfig, input: &Path, valid: &Path, output: &Path, word_level: bool, log: Option<&Path>) -> Result<()> {
    let train_text = lm_sentences(input, word_level)?;
    let valid_text = lm_sentences(valid, word_level)?;
    let vocab = Vocabulary::build(train_text.iter().map(Vec::as_slice), None);
    let mut lm = cfg.lm.clone();
    lm.vocab = vocab.len();
    let encode = |s: &[Vec<String>]| -> Vec<Vec<u32>> { s.iter().map(|x| vocab.encode(x)).collect() };
    let (train_ids, valid_ids) = (encode(&train_text), encode(&valid_text));
    let model = LanguageModel::<f32>::build(lm, cfg.seed)?.with_vocab(vocab.clone())?;
    log::info!("language model {} parameters", model.count_params());
    let outcome = lm_train(model, &train_ids, &valid_ids, &cfg.schedule, cfg.seed, &mut SaveLm(output))?;
    outcome.best.save(output)?;
    write_log(log, &outcome.log)?;
    let best = outcome.best_score.map_or("n/a".to_string(), |b| format!("{b:.2}"));
    println!(
        "{}: best valid perplexity {best} after {} updates, stopped by {:?}",
        output.display(),
        outcome.updates,
        outcome.stop
    );
    ensure!(outcome.stop != StopReason::Diverged, "language model training diverged");
    Ok(())
}

fn cmd_lm_score(model: &Path, input: &Path, output: Option<&Path>, word_level: bool) -> Result<()> {
    let lm = LanguageModel::<f32>::load(model).with_context(|| format!("cannot load {}", model.display()))?;
    let text = lm_sentences(input, word_level)?;
    let scores: Vec<f64> = text
        .par_iter()
        .map(|s| lm.score_tokens(s))
        .collect::<knmt::Result<_>>()?;
    let tokens: usize = text.iter().map(|s| s.len() + 1).sum();
    let total: f64 = scores.iter().sum();
    if let Some(p) = output {
        write_lines(Some(p), &scores.iter().map(|s| s.to_string()).collect::<Vec<_>>())?;
    }
    println!(
        "sentences {} tokens {tokens} logprob {total:.4} perplexity {:.4}",
        text.len(),
        (-total / tokens.max(1) as f64).exp()
    );
    Ok(())
}

fn named_paths(items: &[String], flag: &str) -> Result<Vec<(String, PathBuf)>> {
    items
        .iter()
        .map(|s| {
            let (n, p) = s
                .split_once('=')
                .with_context(|| format!("{flag} expects NAME=CHECKPOINT, got {s:?}"))?;
            ensure!(!n.is_empty() && !n.contains(char::is_whitespace), "bad feature name {n:?}");
            Ok((n.to_string(), PathBuf::from(p)))
        })
        .collect()
}

/// Read n-best lists and attach every requested feature.
fn scored_lists(nbest: &Path, f: &FeatureArgs) -> Result<Vec<Vec<NBestEntry>>> {
    let lists = group_nbest(read_nbest(nbest)?);
    let lms: Vec<(String, LanguageModel<f32>)> = named_paths(&f.lms, "--lm")?
        .into_iter()
        .map(|(n, p)| Ok((n, LanguageModel::load(&p).with_context(|| format!("cannot load {}", p.display()))?)))
        .collect::<Result<_>>()?;
    let nmts: Vec<(String, Seq2SeqModel<f32>)> = named_paths(&f.scorers, "--scorer-model")?
        .into_iter()
        .map(|(n, p)| Ok((n, Seq2SeqModel::load(&p).with_context(|| format!("cannot load {}", p.display()))?)))
        .collect::<Result<_>>()?;
    let sources = match &f.source {
        Some(p) => read_sentences(p)?,
        None if nmts.is_empty() => Vec::new(),
        None => bail!("--scorer-model needs --source"),
    };
    if !nmts.is_empty() {
        ensure!(sources.len() >= lists.len(), "{} source sentences for {} n-best lists", sources.len(), lists.len());
    }
    let word_level = f.lm_word_level;
    let lm_fns: Vec<FeatureFn<'_>> = lms
        .iter()
        .map(|(_, lm)| -> FeatureFn<'_> {
            Box::new(move |t: &[String]| {
                if word_level {
                    lm.score_tokens(&detokenize_bpe(t).0)
                } else {
                    lm.score_tokens(t)
                }
            })
        })
        .collect();
    let wc: &(dyn Fn(&[String]) -> knmt::Result<f64> + Sync) = &word_count;
    lists
        .into_par_iter()
        .enumerate()
        .map(|(i, list)| {
            let nmt_fns: Vec<FeatureFn<'_>> = nmts
                .iter()
                .map(|(_, m)| -> FeatureFn<'_> {
                    let v = m.vocabs.as_ref().expect("loaded checkpoints carry vocabularies");
                    let src = v.src.encode(&sources[i]);
                    Box::new(move |t: &[String]| m.sequence_logprob(&src, &v.tgt.encode(t), None))
                })
                .collect();
            let mut scorers: Vec<Scorer<'_>> = Vec::new();
            for ((n, _), f) in lms.iter().zip(&lm_fns) {
                scorers.push((n.as_str(), f.as_ref()));
            }
            for ((n, _), f) in nmts.iter().zip(&nmt_fns) {
                scorers.push((n.as_str(), f.as_ref()));
            }
            if f.words {
                scorers.push(("words", wc));
            }
            Ok(add_features(list, &scorers)?)
        })
        .collect()
}

fn cmd_rerank(
    nbest: &Path,
    weights: &Path,
    features: &FeatureArgs,
    output: Option<&Path>,
    nbest_out: Option<&Path>,
    keep_bpe: bool,
) -> Result<()> {
    let weights = RerankWeights::load(weights)?;
    let lists = scored_lists(nbest, features)?;
    let mut best = Vec::with_capacity(lists.len());
    let mut all = Vec::new();
    for list in lists {
        let ranked = rerank(list, &weights)?;
        best.push(ranked.first().map_or_else(String::new, |e| {
            if keep_bpe {
                e.tokens.join(" ")
            } else {
                detokenize_bpe(&e.tokens).0.join(" ")
            }
        }));
        all.extend(ranked);
    }
    if let Some(p) = nbest_out {
        write_nbest(p, &all)?;
    }
    write_lines(output, &best)
}

fn cmd_tune(
    cfg: &RunConfig,
    nbest: &Path,
    reference: &Path,
    features: &FeatureArgs,
    names: &[String],
    output: &Path,
) -> Result<()> {
    let lists = scored_lists(nbest, features)?;
    let refs = read_sentences(reference)?;
    ensure!(refs.len() == lists.len(), "{} references for {} n-best lists", refs.len(), lists.len());
    let names: Vec<String> = if names.is_empty() {
        let mut seen: Vec<String> = Vec::new();
        for e in lists.iter().flatten() {
            for (n, _) in &e.features {
                if !seen.contains(n) {
                    seen.push(n.clone());
                }
            }
        }
        seen
    } else {
        names.to_vec()
    };
    let result = tune_weights(&lists, &refs, &names, cfg.tune_iterations, cfg.tune_restarts, cfg.seed)?;
    result.weights.save(output)?;
    let check = dev_bleu(&lists, &refs, &result.weights)?;
    debug_assert!((check - result.bleu).abs() < 1e-9);
    println!("dev BLEU {:.2} -> {:.2}", result.initial_bleu, result.bleu);
    Ok(())
}

fn cmd_reinflect(
    cfg: &RunConfig,
    dict: Option<&Path>,
    tagged: Option<&Path>,
    save_dict: Option<&Path>,
    input: &Path,
    output: Option<&Path>,
) -> Result<()> {
    let dictionary = match (dict, tagged) {
        (Some(d), None) => ReinflectionDictionary::load(d)?,
        (None, Some(t)) => ReinflectionDictionary::from_tagged(read_text(t)?.lines())?,
        _ => bail!("give exactly one of --dict and --tagged"),
    };
    if let Some(p) = save_dict {
        dictionary.save(p)?;
    }
    let (lemmas, factors) = read_factored(input)?;
    let mut entries = Vec::new();
    let mut misses = 0;
    for (i, (l, f)) in lemmas.iter().zip(&factors).enumerate() {
        let (l, f) = join_factored_bpe(l, f);
        let r = reinflect(&dictionary, &l, &f, cfg.k, cfg.expansion_cap)?;
        misses += r.misses;
        entries.extend(r.sentences.into_iter().enumerate().map(|(rank, s)| NBestEntry {
            index: i,
            tokens: s,
            features: vec![("rank".to_string(), -(rank as f64))],
            total: -(rank as f64),
        }));
    }
    if misses > 0 {
        log::warn!("{misses} lemma|factor pairs were not in the dictionary and fell back to the lemma");
    }
    let lines: Vec<String> = entries.iter().map(knmt::decode::format_nbest_line).collect();
    write_lines(output, &lines)
}

fn cmd_params(cfg: &RunConfig) -> Result<()> {
    let m = &cfg.model;
    ensure!(m.src_vocab > 0 && m.tgt_vocab > 0, "params needs src_vocab and tgt_vocab in the configuration");
    m.validate()?;
    println!("{}", m.param_count());
    Ok(())
}
