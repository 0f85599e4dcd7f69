use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::corpus::split_fields;
use crate::error::{Error, Result};

pub const DEFAULT_EXPANSION_CAP: usize = 1000;

/// `(lemma, factors)` → surface words ranked by descending count, ties
/// lexicographic.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReinflectionDictionary {
    entries: HashMap<(String, String), Vec<(String, u64)>>,
}

impl ReinflectionDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn add(&mut self, lemma: &str, factors: &str, word: &str, count: u64) {
        let list = self.entries.entry((lemma.to_string(), factors.to_string())).or_default();
        match list.iter_mut().find(|(w, _)| w == word) {
            Some(slot) => slot.1 += count,
            None => list.push((word.to_string(), count)),
        }
        list.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    }

    pub fn candidates(&self, lemma: &str, factors: &str) -> Option<&[(String, u64)]> {
        self.entries
            .get(&(lemma.to_string(), factors.to_string()))
            .map(Vec::as_slice)
    }

    /// Count `word|lemma|factors` tokens of tagged text.
    pub fn from_tagged<'a, I: IntoIterator<Item = &'a str>>(lines: I) -> Result<Self> {
        let mut counts: HashMap<(String, String, String), u64> = HashMap::new();
        for line in lines {
            for tok in line.split_whitespace() {
                match split_fields(tok)?.as_slice() {
                    [w, l, f] if !w.is_empty() && !l.is_empty() && !f.is_empty() => {
                        *counts.entry((l.clone(), f.clone(), w.clone())).or_default() += 1;
                    }
                    _ => return Err(Error::contract(format!("expected word|lemma|factors, found {tok:?}"))),
                }
            }
        }
        let mut keys: Vec<_> = counts.into_iter().collect();
        keys.sort();
        let mut d = Self::new();
        for ((l, f, w), c) in keys {
            d.add(&l, &f, &w, c);
        }
        Ok(d)
    }

    /// Lines of `lemma<TAB>factors<TAB>word<TAB>count`.
    pub fn load(path: &Path) -> Result<Self> {
        let mut d = Self::new();
        for (i, line) in fs::read_to_string(path)?.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |detail: &str| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                detail: detail.to_string(),
            };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 4 {
                return Err(bad("expected lemma, factors, word and count"));
            }
            let count = f[3].trim().parse().map_err(|_| bad("count is not an integer"))?;
            d.add(f[0], f[1], f[2], count);
        }
        Ok(d)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut keys: Vec<_> = self.entries.keys().collect();
        keys.sort();
        let mut out = String::new();
        for k in keys {
            for (w, c) in &self.entries[k] {
                out.push_str(&format!("{}\t{}\t{w}\t{c}\n", k.0, k.1));
            }
        }
        fs::write(path, out)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reinflection {
    /// Surface sentences, most frequent combination first.
    pub sentences: Vec<Vec<String>>,
    /// Positions whose pair was not in the dictionary.
    pub misses: usize,
}

struct Node {
    score: f64,
    ranks: Vec<usize>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.ranks.cmp(&self.ranks))
    }
}

/// Expand a lemma/factor sentence into surface sentences using the top
/// `k` words per position. Combinations are produced best-first by the
/// product of relative word frequencies, at most `cap` of them. Unknown
/// pairs keep the lemma.
pub fn reinflect<S: AsRef<str>>(
    dict: &ReinflectionDictionary,
    lemmas: &[S],
    factors: &[S],
    k: usize,
    cap: usize,
) -> Result<Reinflection> {
    if k == 0 || cap == 0 {
        return Err(Error::contract("k and the expansion cap must be at least 1"));
    }
    if lemmas.len() != factors.len() {
        return Err(Error::contract("lemma and factor streams differ in length"));
    }
    let mut misses = 0;
    let options: Vec<Vec<(String, f64)>> = lemmas
        .iter()
        .zip(factors)
        .map(|(l, f)| match dict.candidates(l.as_ref(), f.as_ref()) {
            Some(c) => {
                let total: u64 = c.iter().map(|x| x.1).sum();
                c.iter()
                    .take(k)
                    .map(|(w, n)| (w.clone(), ((*n).max(1) as f64 / total.max(1) as f64).ln()))
                    .collect()
            }
            None => {
                misses += 1;
                vec![(l.as_ref().to_string(), 0.0)]
            }
        })
        .collect();
    let score = |ranks: &[usize]| ranks.iter().zip(&options).map(|(&r, o)| o[r].1).sum::<f64>();
    let mut heap = BinaryHeap::new();
    let mut seen = HashSet::new();
    let start = vec![0; options.len()];
    heap.push(Node {
        score: score(&start),
        ranks: start.clone(),
    });
    seen.insert(start);
    let mut sentences = Vec::new();
    while let Some(node) = heap.pop() {
        sentences.push(node.ranks.iter().zip(&options).map(|(&r, o)| o[r].0.clone()).collect());
        if sentences.len() >= cap {
            break;
        }
        for pos in 0..options.len() {
            if node.ranks[pos] + 1 < options[pos].len() {
                let mut next = node.ranks.clone();
                next[pos] += 1;
                if seen.insert(next.clone()) {
                    heap.push(Node {
                        score: score(&next),
                        ranks: next,
                    });
                }
            }
        }
    }
    Ok(Reinflection { sentences, misses })
}
