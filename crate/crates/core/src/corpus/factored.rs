use super::{SubwordModel, CONTINUATION};
use crate::error::{Error, Result};

/// A lemma with its factor tag string.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FactoredToken {
    pub lemma: String,
    pub factors: String,
}

pub fn escape_field(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '|' => out.push_str("\\p"),
            c => out.push(c),
        }
    }
    out
}

/// Split `s` on unescaped `|`, decoding `\p` and `\\` in each field.
pub fn split_fields(s: &str) -> Result<Vec<String>> {
    let mut fields = vec![String::new()];
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        match c {
            '\\' => match chars.next() {
                Some('p') => fields.last_mut().expect("non-empty").push('|'),
                Some('\\') => fields.last_mut().expect("non-empty").push('\\'),
                other => return Err(Error::contract(format!("bad escape \\{} in {s:?}", other.map_or(String::new(), String::from)))),
            },
            '|' => fields.push(String::new()),
            c => fields.last_mut().expect("non-empty").push(c),
        }
    }
    Ok(fields)
}

impl FactoredToken {
    pub fn new(lemma: impl Into<String>, factors: impl Into<String>) -> Self {
        FactoredToken {
            lemma: lemma.into(),
            factors: factors.into(),
        }
    }

    /// Parse `lemma|factors`.
    pub fn parse(s: &str) -> Result<Self> {
        match split_fields(s)?.as_slice() {
            [lemma, factors] if !lemma.is_empty() && !factors.is_empty() => Ok(FactoredToken::new(lemma, factors)),
            _ => Err(Error::contract(format!("expected lemma|factors, found {s:?}"))),
        }
    }

    pub fn format(&self) -> String {
        format!("{}|{}", escape_field(&self.lemma), escape_field(&self.factors))
    }
}

pub fn parse_factored_sentence(line: &str) -> Result<(Vec<String>, Vec<String>)> {
    let mut lemmas = Vec::new();
    let mut factors = Vec::new();
    for tok in line.split_whitespace() {
        let t = FactoredToken::parse(tok)?;
        lemmas.push(t.lemma);
        factors.push(t.factors);
    }
    Ok((lemmas, factors))
}

pub fn format_factored_sentence<S: AsRef<str>>(lemmas: &[S], factors: &[S]) -> String {
    lemmas
        .iter()
        .zip(factors)
        .map(|(l, f)| FactoredToken::new(l.as_ref(), f.as_ref()).format())
        .collect::<Vec<_>>()
        .join(" ")
}

/// BPE on the lemma stream; each factor is repeated once per lemma piece.
pub fn factored_bpe_apply<S: AsRef<str>>(
    model: &SubwordModel,
    lemmas: &[S],
    factors: &[S],
) -> Result<(Vec<String>, Vec<String>)> {
    if lemmas.len() != factors.len() {
        return Err(Error::contract(format!(
            "lemma stream has {} tokens, factor stream {}",
            lemmas.len(),
            factors.len()
        )));
    }
    let mut out_l = Vec::with_capacity(lemmas.len());
    let mut out_f = Vec::with_capacity(lemmas.len());
    for (l, f) in lemmas.iter().zip(factors) {
        let pieces = model.apply_word(l.as_ref());
        out_f.extend(std::iter::repeat_n(f.as_ref().to_string(), pieces.len()));
        out_l.extend(pieces);
    }
    Ok((out_l, out_f))
}

/// Undo [`factored_bpe_apply`]: join continued lemma pieces, keeping the
/// factor of each word's last piece.
pub fn join_factored_bpe<S: AsRef<str>>(lemmas: &[S], factors: &[S]) -> (Vec<String>, Vec<String>) {
    let mut out_l = Vec::new();
    let mut out_f = Vec::new();
    let mut cur = String::new();
    let mut open = false;
    for (l, f) in lemmas.iter().zip(factors) {
        match l.as_ref().strip_suffix(CONTINUATION) {
            Some(piece) => {
                cur.push_str(piece);
                open = true;
            }
            None => {
                cur.push_str(l.as_ref());
                out_l.push(std::mem::take(&mut cur));
                out_f.push(f.as_ref().to_string());
                open = false;
            }
        }
    }
    if open {
        out_l.push(cur);
        out_f.push(factors.last().map_or(String::new(), |f| f.as_ref().to_string()));
    }
    (out_l, out_f)
}
