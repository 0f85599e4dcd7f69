use std::fs;
use std::path::Path;

use rand::Rng;

use super::bleu;
use crate::corpus::detokenize_bpe;
use crate::decode::NBestEntry;
use crate::error::{Error, Result};
use crate::rng::{sub_rng, Stream};

/// Named feature weights.
#[derive(Debug, Clone, PartialEq)]
pub struct RerankWeights {
    pub weights: Vec<(String, f64)>,
}

impl RerankWeights {
    pub fn uniform<S: AsRef<str>>(names: &[S]) -> Self {
        RerankWeights {
            weights: names.iter().map(|n| (n.as_ref().to_string(), 1.0)).collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.weights.iter().find(|(n, _)| n == name).map(|&(_, w)| w)
    }

    pub fn names(&self) -> Vec<&str> {
        self.weights.iter().map(|(n, _)| n.as_str()).collect()
    }

    fn check(&self) -> Result<()> {
        if self.weights.is_empty() || self.weights.iter().all(|&(_, w)| w == 0.0) {
            return Err(Error::contract("at least one rerank weight must be nonzero"));
        }
        if self.weights.iter().any(|(_, w)| !w.is_finite()) {
            return Err(Error::contract("rerank weights must be finite"));
        }
        Ok(())
    }

    /// `name = value` lines; `#` starts a comment.
    pub fn load(path: &Path) -> Result<Self> {
        let mut weights = Vec::new();
        for (i, line) in fs::read_to_string(path)?.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parsed = line
                .split_once('=')
                .and_then(|(n, v)| Some((n.trim().to_string(), v.trim().parse::<f64>().ok()?)))
                .filter(|(n, _)| !n.is_empty());
            match parsed {
                Some(p) => weights.push(p),
                None => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line: i + 1,
                        detail: format!("expected name = value, found {line:?}"),
                    })
                }
            }
        }
        let w = RerankWeights { weights };
        w.check()?;
        Ok(w)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let out: String = self.weights.iter().map(|(n, w)| format!("{n} = {w}\n")).collect();
        fs::write(path, out)?;
        Ok(())
    }
}

/// A named scoring function over hypothesis tokens.
pub type Scorer<'a> = (&'a str, &'a (dyn Fn(&[String]) -> Result<f64> + Sync));

/// Attach each scorer's value as a feature; hypotheses with a
/// non-finite score are dropped with a warning.
pub fn add_features(list: Vec<NBestEntry>, scorers: &[Scorer<'_>]) -> Result<Vec<NBestEntry>> {
    let mut out = Vec::with_capacity(list.len());
    'hyps: for mut e in list {
        for (name, f) in scorers {
            let v = f(&e.tokens)?;
            if !v.is_finite() {
                log::warn!("dropping hypothesis {} of sentence {}: {name} is {v}", e.tokens.join(" "), e.index);
                continue 'hyps;
            }
            e.set_feature(name, v);
        }
        out.push(e);
    }
    Ok(out)
}

fn weighted_total(e: &NBestEntry, w: &RerankWeights) -> Result<f64> {
    w.weights.iter().try_fold(0.0, |acc, (n, wt)| {
        e.feature(n)
            .map(|v| acc + wt * v)
            .ok_or_else(|| Error::contract(format!("hypothesis lacks feature {n}")))
    })
}

/// Set every total to the weighted feature sum and sort descending;
/// ties keep their input order.
pub fn rerank(mut list: Vec<NBestEntry>, weights: &RerankWeights) -> Result<Vec<NBestEntry>> {
    weights.check()?;
    for e in &mut list {
        e.total = weighted_total(e, weights)?;
    }
    list.sort_by(|a, b| b.total.total_cmp(&a.total));
    Ok(list)
}

/// Score with `scorers`, then [`rerank`].
pub fn rescore_nbest(list: Vec<NBestEntry>, scorers: &[Scorer<'_>], weights: &RerankWeights) -> Result<Vec<NBestEntry>> {
    rerank(add_features(list, scorers)?, weights)
}

/// Add the `words` feature: hypothesis length in words after subword joins.
pub fn word_count(tokens: &[String]) -> Result<f64> {
    Ok(detokenize_bpe(tokens).0.len() as f64)
}

fn pick(list: &[NBestEntry], w: &[(String, f64)]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in list.iter().enumerate() {
        let s: f64 = w.iter().map(|(n, wt)| wt * e.feature(n).unwrap_or(0.0)).sum();
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i)
}

/// Corpus BLEU of the 1-best of every list under `weights`.
pub fn dev_bleu(lists: &[Vec<NBestEntry>], references: &[Vec<String>], weights: &RerankWeights) -> Result<f64> {
    let hyps: Vec<Vec<String>> = lists
        .iter()
        .map(|l| pick(l, &weights.weights).map_or_else(Vec::new, |i| detokenize_bpe(&l[i].tokens).0))
        .collect();
    Ok(bleu(&hyps, references)?.bleu)
}

const GOLDEN: f64 = 0.618_033_988_749_895;

/// Maximize dev BLEU over one coordinate: a coarse grid over the bracket
/// followed by golden-section refinement around the best grid point.
fn line_search(mut f: impl FnMut(f64) -> Result<f64>, lo: f64, hi: f64) -> Result<(f64, f64)> {
    const GRID: usize = 24;
    let step = (hi - lo) / GRID as f64;
    let mut best = (lo, f(lo)?);
    for k in 1..=GRID {
        let x = lo + step * k as f64;
        let y = f(x)?;
        if y > best.1 {
            best = (x, y);
        }
    }
    let (mut a, mut b) = (best.0 - step, best.0 + step);
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    for _ in 0..20 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            fd = f(d)?;
        }
    }
    for (x, y) in [(c, fc), (d, fd)] {
        if y > best.1 {
            best = (x, y);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneResult {
    pub weights: RerankWeights,
    pub bleu: f64,
    pub initial_bleu: f64,
}

/// Cyclic coordinate ascent on dev BLEU from uniform weights, with
/// `restarts` extra runs from random perturbations of the best point.
/// The returned weights never score below the uniform start.
pub fn tune_weights<S: AsRef<str>>(
    lists: &[Vec<NBestEntry>],
    references: &[Vec<String>],
    names: &[S],
    iterations: usize,
    restarts: usize,
    seed: u64,
) -> Result<TuneResult> {
    if names.is_empty() {
        return Err(Error::contract("nothing to tune"));
    }
    if lists.len() != references.len() {
        return Err(Error::contract("one n-best list per reference is required"));
    }
    let start = RerankWeights::uniform(names);
    let initial_bleu = dev_bleu(lists, references, &start)?;
    let mut best = (start.clone(), initial_bleu);
    let mut rng = sub_rng(seed, Stream::Tuning);
    for run in 0..=restarts {
        let mut w = best.0.clone();
        if run > 0 {
            for (_, x) in w.weights.iter_mut() {
                *x += rng.gen_range(-1.0..1.0) * x.abs().max(1.0);
            }
        }
        let mut cur = dev_bleu(lists, references, &w)?;
        for _ in 0..iterations {
            let before = cur;
            for i in 0..w.weights.len() {
                let scale = w.weights.iter().map(|(_, x)| x.abs()).fold(1.0, f64::max);
                let centre = w.weights[i].1;
                let mut trial = w.clone();
                let (x, y) = line_search(
                    |x| {
                        trial.weights[i].1 = x;
                        dev_bleu(lists, references, &trial)
                    },
                    centre - 4.0 * scale,
                    centre + 4.0 * scale,
                )?;
                if y > cur && w.weights.iter().enumerate().any(|(j, (_, v))| if j == i { x != 0.0 } else { *v != 0.0 }) {
                    w.weights[i].1 = x;
                    cur = y;
                }
            }
            if cur <= before {
                break;
            }
        }
        if cur > best.1 {
            best = (w, cur);
        }
    }
    Ok(TuneResult {
        weights: best.0,
        bleu: best.1,
        initial_bleu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn entry(index: usize, toks: &str, feats: &[(&str, f64)]) -> NBestEntry {
        NBestEntry {
            index,
            tokens: toks.split_whitespace().map(String::from).collect(),
            features: feats.iter().map(|&(n, v)| (n.to_string(), v)).collect(),
            total: 0.0,
        }
    }

    #[test]
    fn single_feature_orders_by_it() {
        let list = vec![entry(0, "a", &[("m", -3.0)]), entry(0, "b", &[("m", -1.0)]), entry(0, "c", &[("m", -2.0)])];
        let out = rerank(list, &RerankWeights::uniform(&["m"])).unwrap();
        let order: Vec<_> = out.iter().map(|e| e.tokens[0].as_str()).collect();
        assert_eq!(order, vec!["b", "c", "a"]);
    }

    #[test]
    fn word_count_weight_puts_longest_first() {
        let list = vec![entry(0, "a b", &[]), entry(0, "a b c@@ d e", &[]), entry(0, "a", &[])];
        let wc: &(dyn Fn(&[String]) -> Result<f64> + Sync) = &word_count;
        let out = rescore_nbest(list, &[("words", wc)], &RerankWeights::uniform(&["words"])).unwrap();
        assert_eq!(out[0].tokens.len(), 5);
        assert_eq!(out[0].feature("words"), Some(4.0));
    }

    #[test]
    fn two_features_hand_order() {
        let list = vec![
            entry(0, "x", &[("nmt", -2.0), ("lm", -10.0)]),
            entry(0, "y", &[("nmt", -3.0), ("lm", -4.0)]),
            entry(0, "z", &[("nmt", -1.0), ("lm", -12.0)]),
        ];
        let w = RerankWeights {
            weights: vec![("nmt".into(), 1.0), ("lm".into(), 0.5)],
        };
        // x: -7, y: -5, z: -7 (tie keeps input order)
        let out = rerank(list, &w).unwrap();
        let order: Vec<_> = out.iter().map(|e| e.tokens[0].as_str()).collect();
        assert_eq!(order, vec!["y", "x", "z"]);
        assert_eq!(out[0].total, -5.0);
    }

    #[test]
    fn non_finite_scores_drop_the_hypothesis() {
        let list = vec![entry(0, "a", &[]), entry(0, "bad", &[])];
        let f: &(dyn Fn(&[String]) -> Result<f64> + Sync) =
            &|t: &[String]| Ok(if t[0] == "bad" { f64::NEG_INFINITY } else { -1.0 });
        assert_eq!(add_features(list, &[("lm", f)]).unwrap().len(), 1);
    }

    #[test]
    fn positive_scaling_keeps_ranking() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let list: Vec<NBestEntry> = (0..20)
            .map(|i| entry(0, &format!("h{i}"), &[("a", rng.gen_range(-5.0..0.0)), ("b", rng.gen_range(-5.0..0.0))]))
            .collect();
        let w = RerankWeights {
            weights: vec![("a".into(), 0.7), ("b".into(), 1.3)],
        };
        let scaled = RerankWeights {
            weights: vec![("a".into(), 0.7 * 3.5), ("b".into(), 1.3 * 3.5)],
        };
        let x: Vec<_> = rerank(list.clone(), &w).unwrap().into_iter().map(|e| e.tokens).collect();
        let y: Vec<_> = rerank(list, &scaled).unwrap().into_iter().map(|e| e.tokens).collect();
        assert_eq!(x, y);
    }

    #[test]
    fn weights_file_roundtrip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("w.txt");
        let w = RerankWeights {
            weights: vec![("nmt".into(), 1.0), ("lm".into(), -0.25)],
        };
        w.save(&p).unwrap();
        assert_eq!(RerankWeights::load(&p).unwrap(), w);
        fs::write(&p, "nmt = 0\n").unwrap();
        assert!(RerankWeights::load(&p).is_err());
        fs::write(&p, "nmt 1\n").unwrap();
        assert!(matches!(RerankWeights::load(&p), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn single_scorer_tuning_keeps_its_one_best() {
        let lists = vec![
            vec![entry(0, "a b c", &[("m", -1.0)]), entry(0, "a b d", &[("m", -2.0)])],
            vec![entry(1, "x y z w", &[("m", -5.0)]), entry(1, "x y z q", &[("m", -4.0)])],
        ];
        let refs = vec![vec!["a".into(), "b".into(), "d".into()], vec!["x".into(), "y".into(), "z".into(), "w".into()]];
        let t = tune_weights(&lists, &refs, &["m"], 5, 3, 0).unwrap();
        assert!(t.bleu >= t.initial_bleu);
        if t.weights.get("m").unwrap() > 0.0 {
            assert_eq!(t.bleu, t.initial_bleu);
        }
    }
}
