use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const END_OF_WORD: &str = "</w>";
pub const CONTINUATION: &str = "@@";
const HEADER: &str = "#bpe v1";

type Pair = (String, String);

/// Learned merge table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubwordModel {
    merges: Vec<Pair>,
    ranks: HashMap<Pair, usize>,
}

/// Learning options.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BpeOptions {
    pub num_merges: usize,
    /// Stop early once the most frequent pair occurs fewer times.
    pub min_frequency: usize,
}

impl BpeOptions {
    pub fn new(num_merges: usize) -> Self {
        BpeOptions {
            num_merges,
            min_frequency: 2,
        }
    }
}

/// Initial symbols of a word: its characters, the last one carrying the
/// end-of-word marker.
pub fn word_symbols(word: &str) -> Vec<String> {
    let chars: Vec<char> = word.chars().collect();
    let n = chars.len();
    chars
        .iter()
        .enumerate()
        .map(|(i, c)| {
            if i + 1 == n {
                format!("{c}{END_OF_WORD}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

/// Merge every non-overlapping occurrence of `(left, right)`, scanning
/// left to right.
pub fn merge_pair(symbols: &[String], left: &str, right: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == left && symbols[i + 1] == right {
            out.push(format!("{left}{right}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// Learn merges jointly over all `corpora` (tokenized sentences).
///
/// Each round merges the most frequent adjacent pair; equal frequencies
/// go to the lexicographically smallest `(left, right)`.
pub fn bpe_learn<'a, I>(corpora: I, opts: BpeOptions) -> Result<SubwordModel>
where
    I: IntoIterator<Item = &'a [String]>,
{
    let mut freq: HashMap<&str, usize> = HashMap::new();
    for sentence in corpora {
        for w in sentence {
            *freq.entry(w.as_str()).or_default() += 1;
        }
    }
    if freq.is_empty() {
        return Err(Error::contract("cannot learn BPE from an empty corpus"));
    }
    let mut types: Vec<(&str, usize)> = freq.into_iter().collect();
    types.sort();
    let mut words: Vec<(Vec<String>, usize)> = types.iter().map(|&(w, f)| (word_symbols(w), f)).collect();

    let mut stats: HashMap<Pair, usize> = HashMap::new();
    let mut index: HashMap<Pair, BTreeSet<usize>> = HashMap::new();
    for (wi, (syms, f)) in words.iter().enumerate() {
        for p in syms.windows(2) {
            let key = (p[0].clone(), p[1].clone());
            *stats.entry(key.clone()).or_default() += f;
            index.entry(key).or_default().insert(wi);
        }
    }

    let mut merges = Vec::new();
    while merges.len() < opts.num_merges {
        let best = stats
            .iter()
            .filter(|(_, &c)| c > 0)
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)));
        let Some((pair, &count)) = best else { break };
        if count < opts.min_frequency.max(1) {
            break;
        }
        let pair = pair.clone();
        let touched: Vec<usize> = index.get(&pair).map(|s| s.iter().copied().collect()).unwrap_or_default();
        for wi in touched {
            let (syms, f) = &words[wi];
            let f = *f;
            let merged = merge_pair(syms, &pair.0, &pair.1);
            if merged.len() == syms.len() {
                continue;
            }
            for p in syms.windows(2) {
                let key = (p[0].clone(), p[1].clone());
                if let Some(c) = stats.get_mut(&key) {
                    *c -= f;
                    if *c == 0 {
                        stats.remove(&key);
                    }
                }
            }
            for p in merged.windows(2) {
                let key = (p[0].clone(), p[1].clone());
                *stats.entry(key.clone()).or_default() += f;
                index.entry(key).or_default().insert(wi);
            }
            words[wi].0 = merged;
        }
        stats.remove(&pair);
        merges.push(pair);
    }
    Ok(SubwordModel::from_merges(merges))
}

impl SubwordModel {
    pub fn from_merges(merges: Vec<(String, String)>) -> Self {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (i, m) in merges.iter().enumerate() {
            ranks.entry(m.clone()).or_insert(i);
        }
        SubwordModel { merges, ranks }
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    /// Final symbols of one word, end-of-word marker still attached.
    pub fn segment_word(&self, word: &str) -> Vec<String> {
        let mut syms = word_symbols(word);
        loop {
            let best = syms
                .windows(2)
                .filter_map(|p| self.ranks.get(&(p[0].clone(), p[1].clone())).map(|&r| (r, p)))
                .min_by_key(|(r, _)| *r);
            let Some((_, p)) = best else { break };
            let (l, r) = (p[0].clone(), p[1].clone());
            syms = merge_pair(&syms, &l, &r);
        }
        syms
    }

    /// Subword pieces of one word; all but the last carry `@@`.
    pub fn apply_word(&self, word: &str) -> Vec<String> {
        let syms = self.segment_word(word);
        let n = syms.len();
        syms.into_iter()
            .enumerate()
            .map(|(i, s)| {
                if i + 1 == n {
                    s.strip_suffix(END_OF_WORD).unwrap_or(&s).to_string()
                } else {
                    format!("{s}{CONTINUATION}")
                }
            })
            .collect()
    }

    pub fn apply<S: AsRef<str>>(&self, sentence: &[S]) -> Vec<String> {
        sentence.iter().flat_map(|w| self.apply_word(w.as_ref())).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = format!("{HEADER}\n");
        for (l, r) in &self.merges {
            out.push_str(&format!("{l} {r}\n"));
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let parse_err = |line: usize, detail: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            detail,
        };
        let mut lines = text.lines();
        match lines.next() {
            Some(HEADER) => {}
            other => return Err(parse_err(1, format!("expected {HEADER:?}, found {other:?}"))),
        }
        let mut merges = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_string(), r.to_string()))
                }
                _ => return Err(parse_err(i + 2, format!("expected \"left right\", found {line:?}"))),
            }
        }
        Ok(Self::from_merges(merges))
    }
}

/// Join `@@`-continued pieces back into words. The flag reports a
/// dangling continuation at the end, which is kept as-is.
pub fn detokenize_bpe<S: AsRef<str>>(tokens: &[S]) -> (Vec<String>, bool) {
    let mut words = Vec::new();
    let mut cur = String::new();
    let mut open = false;
    for t in tokens {
        let t = t.as_ref();
        match t.strip_suffix(CONTINUATION) {
            Some(piece) => {
                cur.push_str(piece);
                open = true;
            }
            None => {
                cur.push_str(t);
                words.push(std::mem::take(&mut cur));
                open = false;
            }
        }
    }
    if open {
        words.push(cur);
    }
    (words, open)
}
