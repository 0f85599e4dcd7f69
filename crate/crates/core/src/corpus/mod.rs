//! Subword segmentation, vocabularies and parallel corpora.

mod bpe;
mod factored;
mod vocab;

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{sub_rng, Stream};

pub use bpe::{bpe_learn, detokenize_bpe, merge_pair, word_symbols, BpeOptions, SubwordModel, CONTINUATION, END_OF_WORD};
pub use factored::{
    escape_field, factored_bpe_apply, join_factored_bpe, format_factored_sentence, parse_factored_sentence, split_fields, FactoredToken,
};
pub use vocab::{Vocabulary, BOS, EOS, PAD, RESERVED, UNK};

pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(String::from).collect()
}

/// One whitespace-tokenized sentence per line.
pub fn read_sentences(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(fs::read_to_string(path)?.lines().map(tokenize).collect())
}

pub fn write_sentences<S: AsRef<str>>(path: &Path, sentences: &[Vec<S>]) -> Result<()> {
    let mut out = String::new();
    for s in sentences {
        for (i, t) in s.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(t.as_ref());
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Aligned source/target sentences with per-pair repetition weights and an
/// optional target factor stream.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub src: Vec<Vec<String>>,
    pub tgt: Vec<Vec<String>>,
    pub factors: Option<Vec<Vec<String>>>,
    pub weights: Vec<usize>,
}

impl ParallelCorpus {
    pub fn new(src: Vec<Vec<String>>, tgt: Vec<Vec<String>>) -> Result<Self> {
        if src.len() != tgt.len() {
            return Err(Error::contract(format!(
                "{} source lines but {} target lines",
                src.len(),
                tgt.len()
            )));
        }
        let weights = vec![1; src.len()];
        Ok(ParallelCorpus {
            src,
            tgt,
            factors: None,
            weights,
        })
    }

    pub fn with_factors(mut self, factors: Vec<Vec<String>>) -> Result<Self> {
        if factors.len() != self.tgt.len() || factors.iter().zip(&self.tgt).any(|(f, t)| f.len() != t.len()) {
            return Err(Error::contract("factor stream does not align with the target stream"));
        }
        self.factors = Some(factors);
        Ok(self)
    }

    pub fn with_weight(mut self, weight: usize) -> Result<Self> {
        if weight == 0 {
            return Err(Error::contract("corpus weight must be at least 1"));
        }
        self.weights.iter_mut().for_each(|w| *w = weight);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// Pairs per epoch once weights are expanded.
    pub fn expanded_len(&self) -> usize {
        self.weights.iter().sum()
    }

    pub fn append(&mut self, other: ParallelCorpus) -> Result<()> {
        let (mine, theirs) = (self.factors.is_some(), other.factors.is_some());
        if mine != theirs && !self.is_empty() {
            return Err(Error::contract("cannot mix factored and word-level corpora"));
        }
        if self.is_empty() && theirs {
            self.factors = Some(Vec::new());
        }
        self.src.extend(other.src);
        self.tgt.extend(other.tgt);
        self.weights.extend(other.weights);
        if let (Some(f), Some(o)) = (&mut self.factors, other.factors) {
            f.extend(o);
        }
        Ok(())
    }

    /// Keep the pairs at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> ParallelCorpus {
        ParallelCorpus {
            src: indices.iter().map(|&i| self.src[i].clone()).collect(),
            tgt: indices.iter().map(|&i| self.tgt[i].clone()).collect(),
            factors: self
                .factors
                .as_ref()
                .map(|f| indices.iter().map(|&i| f[i].clone()).collect()),
            weights: indices.iter().map(|&i| self.weights[i]).collect(),
        }
    }

    /// Read a plain pair of files; with `factored_target` the target tokens
    /// are `lemma|factors`.
    pub fn read(src_path: &Path, tgt_path: &Path, factored_target: bool) -> Result<Self> {
        let src = read_sentences(src_path)?;
        if !factored_target {
            return Self::new(src, read_sentences(tgt_path)?);
        }
        let text = fs::read_to_string(tgt_path)?;
        let mut lemmas = Vec::new();
        let mut factors = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let (l, f) = parse_factored_sentence(line).map_err(|e| Error::Parse {
                path: tgt_path.to_path_buf(),
                line: i + 1,
                detail: e.to_string(),
            })?;
            lemmas.push(l);
            factors.push(f);
        }
        Self::new(src, lemmas)?.with_factors(factors)
    }

    /// Weighted manifest: lines `prefix<TAB>weight`, each naming
    /// `prefix.src` / `prefix.tgt` relative to the manifest's directory.
    pub fn read_manifest(path: &Path, factored_target: bool) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut all = ParallelCorpus::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |detail: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                detail,
            };
            let (prefix, weight) = match line.split_once('\t') {
                Some((p, w)) => (p, w.trim().parse::<usize>().map_err(|_| parse_err(format!("bad weight {w:?}")))?),
                None => (line, 1),
            };
            if weight == 0 {
                return Err(parse_err("weight must be at least 1".into()));
            }
            let prefix = base.join(prefix);
            let part = Self::read(
                &prefix.with_extension(ext_with(&prefix, "src")),
                &prefix.with_extension(ext_with(&prefix, "tgt")),
                factored_target,
            )?
            .with_weight(weight)?;
            all.append(part)?;
        }
        Ok(all)
    }
}

fn ext_with(prefix: &Path, ext: &str) -> String {
    match prefix.extension() {
        Some(e) => format!("{}.{ext}", e.to_string_lossy()),
        None => ext.to_string(),
    }
}

/// Keep pairs whose sides both have `min_len..=max_len` tokens and, when
/// `max_ratio` is set, a length ratio of at most `max_ratio`.
pub fn filter_corpus(
    corpus: &ParallelCorpus,
    min_len: usize,
    max_len: usize,
    max_ratio: Option<f64>,
) -> Result<ParallelCorpus> {
    if min_len == 0 || min_len > max_len {
        return Err(Error::contract(format!("invalid length bounds [{min_len}, {max_len}]")));
    }
    let keep: Vec<usize> = (0..corpus.len())
        .filter(|&i| {
            let (s, t) = (corpus.src[i].len(), corpus.tgt[i].len());
            let in_range = (min_len..=max_len).contains(&s) && (min_len..=max_len).contains(&t);
            let ratio_ok = max_ratio.is_none_or(|r| {
                let (s, t) = (s as f64, t as f64);
                (s / t).max(t / s) <= r
            });
            in_range && ratio_ok
        })
        .collect();
    Ok(corpus.select(&keep))
}

/// One epoch of batches as indices into `corpus`; a pair of weight `w`
/// appears `w` times. Pairs are shuffled, grouped into pools of twenty
/// batches sorted by length, cut into batches, and the batch order is
/// shuffled again. With `batch_size` 1 no sorting happens.
pub fn make_batches(corpus: &ParallelCorpus, batch_size: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    let keys: Vec<(usize, usize)> = corpus.tgt.iter().zip(&corpus.src).map(|(t, s)| (t.len(), s.len())).collect();
    batch_indices(&keys, &corpus.weights, batch_size, &mut sub_rng(seed, Stream::Shuffle))
}

/// [`make_batches`] over arbitrary items given their sort keys, drawing
/// from a caller-owned generator so successive epochs differ.
pub fn batch_indices<K: Ord + Copy>(
    keys: &[K],
    weights: &[usize],
    batch_size: usize,
    rng: &mut impl rand::Rng,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::contract("batch_size must be at least 1"));
    }
    if keys.len() != weights.len() {
        return Err(Error::contract("one weight per item is required"));
    }
    let mut order: Vec<usize> = weights
        .iter()
        .enumerate()
        .flat_map(|(i, &w)| std::iter::repeat_n(i, w))
        .collect();
    order.shuffle(rng);
    if batch_size == 1 {
        return Ok(order.into_iter().map(|i| vec![i]).collect());
    }
    let mut batches = Vec::new();
    for pool in order.chunks(batch_size * 20) {
        let mut pool = pool.to_vec();
        pool.sort_by_key(|&i| keys[i]);
        batches.extend(pool.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(rng);
    Ok(batches)
}

/// Append back-translations of the first `limit` monolingual target
/// sentences to `original` as weight-1 synthetic pairs. Sentences whose
/// translation fails or comes back empty are skipped; the count of skips
/// is returned with the corpus.
pub fn assemble_bt_corpus<T>(
    original: &ParallelCorpus,
    mono_target: &[Vec<String>],
    limit: usize,
    mut translate: T,
) -> Result<(ParallelCorpus, usize)>
where
    T: FnMut(&[String]) -> Result<Vec<String>>,
{
    if original.factors.is_some() {
        return Err(Error::contract("back-translation expects a word-level corpus"));
    }
    let mut out = original.clone();
    let mut skipped = 0;
    for sentence in mono_target.iter().take(limit) {
        match translate(sentence) {
            Ok(src) if !src.is_empty() && !sentence.is_empty() => {
                out.src.push(src);
                out.tgt.push(sentence.clone());
                out.weights.push(1);
            }
            Ok(_) => skipped += 1,
            Err(e) => {
                log::warn!("back-translation skipped a sentence: {e}");
                skipped += 1;
            }
        }
    }
    if skipped > 0 {
        log::info!("back-translation skipped {skipped} sentences");
    }
    Ok((out, skipped))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn corpus(pairs: &[(usize, usize)]) -> ParallelCorpus {
        let mk = |n: usize, p: &str| (0..n).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
        ParallelCorpus::new(
            pairs.iter().map(|&(s, _)| mk(s, "s")).collect(),
            pairs.iter().map(|&(_, t)| mk(t, "t")).collect(),
        )
        .unwrap()
    }

    #[test]
    fn filter_bounds_are_inclusive() {
        let c = corpus(&[(3, 50), (2, 10), (10, 51), (50, 3)]);
        let f = filter_corpus(&c, 3, 50, None).unwrap();
        assert_eq!(f.len(), 2);
        assert_eq!(f.src[0].len(), 3);
    }

    #[test]
    fn filter_ratio() {
        let c = corpus(&[(10, 40), (10, 30)]);
        let f = filter_corpus(&c, 1, 100, Some(3.0)).unwrap();
        assert_eq!(f.len(), 1);
        assert_eq!(f.tgt[0].len(), 30);
        assert!(filter_corpus(&ParallelCorpus::default(), 1, 5, None).unwrap().is_empty());
        assert!(filter_corpus(&c, 0, 5, None).is_err());
    }

    #[test]
    fn filter_is_idempotent_and_shrinking() {
        let c = corpus(&[(1, 1), (4, 9), (20, 2), (5, 5), (8, 3)]);
        let once = filter_corpus(&c, 2, 10, Some(2.5)).unwrap();
        assert!(once.len() <= c.len());
        assert_eq!(filter_corpus(&once, 2, 10, Some(2.5)).unwrap(), once);
    }

    #[test]
    fn batch_size_one_follows_shuffle() {
        let c = corpus(&[(1, 1); 30]);
        let b = make_batches(&c, 1, 4).unwrap();
        assert_eq!(b.len(), 30);
        assert!(b.iter().all(|x| x.len() == 1));
        let mut expected: Vec<usize> = (0..30).collect();
        expected.shuffle(&mut sub_rng(4, Stream::Shuffle));
        assert_eq!(b.into_iter().flatten().collect::<Vec<_>>(), expected);
    }

    #[test]
    fn batches_cover_weighted_corpus() {
        let mut c = corpus(&[(2, 3), (5, 1), (1, 7), (4, 4), (3, 3)]);
        c.weights = vec![1, 3, 1, 2, 5];
        let b = make_batches(&c, 2, 9).unwrap();
        let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
        for i in b.iter().flatten() {
            *seen.entry(*i).or_default() += 1;
        }
        for (i, &w) in c.weights.iter().enumerate() {
            assert_eq!(seen[&i], w);
        }
        assert_eq!(make_batches(&c, 2, 9).unwrap(), b);
        assert_ne!(make_batches(&c, 2, 10).unwrap(), b);
    }

    #[test]
    fn manifest_applies_weights() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.src"), "x y\nz\n").unwrap();
        fs::write(dir.path().join("a.tgt"), "X Y\nZ\n").unwrap();
        fs::write(dir.path().join("news.v2.src"), "n\n").unwrap();
        fs::write(dir.path().join("news.v2.tgt"), "N\n").unwrap();
        fs::write(dir.path().join("m.tsv"), "a\t1\nnews.v2\t5\n").unwrap();
        let c = ParallelCorpus::read_manifest(&dir.path().join("m.tsv"), false).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.weights, vec![1, 1, 5]);
        assert_eq!(c.expanded_len(), 7);
        fs::write(dir.path().join("bad.tsv"), "a\tzero\n").unwrap();
        assert!(matches!(
            ParallelCorpus::read_manifest(&dir.path().join("bad.tsv"), false),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn factored_target_file() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("s"), "a b\n").unwrap();
        fs::write(dir.path().join("t"), "go|V run|V+past\n").unwrap();
        let c = ParallelCorpus::read(&dir.path().join("s"), &dir.path().join("t"), true).unwrap();
        assert_eq!(c.tgt[0], vec!["go", "run"]);
        assert_eq!(c.factors.unwrap()[0], vec!["V", "V+past"]);
        fs::write(dir.path().join("t"), "go\n").unwrap();
        assert!(ParallelCorpus::read(&dir.path().join("s"), &dir.path().join("t"), true).is_err());
    }

    #[test]
    fn bt_assembly_bookkeeping() {
        let orig = corpus(&[(2, 2), (3, 3)]).with_weight(2).unwrap();
        let mono: Vec<Vec<String>> = (0..5).map(|i| vec![format!("m{i}")]).collect();
        let (same, skipped) = assemble_bt_corpus(&orig, &mono, 0, |_| unreachable!()).unwrap();
        assert_eq!((same, skipped), (orig.clone(), 0));
        let (out, skipped) = assemble_bt_corpus(&orig, &mono, 4, |s| {
            if s[0] == "m2" {
                Err(Error::contract("boom"))
            } else {
                Ok(vec![s[0].to_uppercase()])
            }
        })
        .unwrap();
        assert_eq!(skipped, 1);
        assert_eq!(out.len(), 2 + 3);
        assert_eq!(out.weights, vec![2, 2, 1, 1, 1]);
        assert_eq!(out.src[4], vec!["M3"]);
        assert_eq!(out.tgt[4], vec!["m3"]);
    }
}
