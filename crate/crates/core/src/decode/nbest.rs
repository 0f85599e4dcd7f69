use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// One line of a Moses-style n-best list:
/// `index ||| tokens ||| name1= v1 name2= v2 ||| total`.
#[derive(Debug, Clone, PartialEq)]
pub struct NBestEntry {
    pub index: usize,
    pub tokens: Vec<String>,
    pub features: Vec<(String, f64)>,
    pub total: f64,
}

impl NBestEntry {
    pub fn feature(&self, name: &str) -> Option<f64> {
        self.features.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    /// Set a feature, replacing an existing value of the same name.
    pub fn set_feature(&mut self, name: &str, value: f64) {
        match self.features.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = value,
            None => self.features.push((name.to_string(), value)),
        }
    }
}

pub fn format_nbest_line(e: &NBestEntry) -> String {
    let feats: Vec<String> = e.features.iter().map(|(n, v)| format!("{n}= {v}")).collect();
    format!("{} ||| {} ||| {} ||| {}", e.index, e.tokens.join(" "), feats.join(" "), e.total)
}

pub fn parse_nbest_line(line: &str) -> std::result::Result<NBestEntry, String> {
    let parts: Vec<&str> = line.split("|||").map(str::trim).collect();
    if parts.len() != 4 {
        return Err(format!("expected 4 fields separated by |||, found {}", parts.len()));
    }
    let index = parts[0].parse().map_err(|_| format!("bad index {:?}", parts[0]))?;
    let tokens = parts[1].split_whitespace().map(String::from).collect();
    let mut features = Vec::new();
    let mut name: Option<String> = None;
    for item in parts[2].split_whitespace() {
        if let Some(n) = item.strip_suffix('=') {
            if let Some(prev) = name {
                return Err(format!("feature {prev} has no value"));
            }
            name = Some(n.to_string());
        } else {
            let n = name.take().ok_or_else(|| format!("value {item:?} without a feature name"))?;
            let v: f64 = item.parse().map_err(|_| format!("bad value {item:?} for {n}"))?;
            features.push((n, v));
        }
    }
    if let Some(n) = name {
        return Err(format!("feature {n} has no value"));
    }
    let total = parts[3].parse().map_err(|_| format!("bad total {:?}", parts[3]))?;
    Ok(NBestEntry {
        index,
        tokens,
        features,
        total,
    })
}

pub fn read_nbest(path: &Path) -> Result<Vec<NBestEntry>> {
    fs::read_to_string(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            parse_nbest_line(l).map_err(|detail| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                detail,
            })
        })
        .collect()
}

pub fn write_nbest(path: &Path, entries: &[NBestEntry]) -> Result<()> {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format_nbest_line(e));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Group entries into one list per sentence index. Indices must be
/// contiguous runs; sentences with no entries get an empty list, up to
/// the largest index seen.
pub fn group_nbest(entries: Vec<NBestEntry>) -> Vec<Vec<NBestEntry>> {
    let n = entries.iter().map(|e| e.index + 1).max().unwrap_or(0);
    let mut out: Vec<Vec<NBestEntry>> = vec![Vec::new(); n];
    for e in entries {
        out[e.index].push(e);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_roundtrip() {
        let e = NBestEntry {
            index: 3,
            tokens: vec!["a".into(), "b@@".into(), "c".into()],
            features: vec![("nmt".into(), -1.25), ("lm".into(), -7.5), ("words".into(), 3.0)],
            total: -8.75,
        };
        let line = format_nbest_line(&e);
        assert_eq!(line, "3 ||| a b@@ c ||| nmt= -1.25 lm= -7.5 words= 3 ||| -8.75");
        assert_eq!(parse_nbest_line(&line).unwrap(), e);
    }

    #[test]
    fn empty_hypothesis_and_bad_lines() {
        let e = parse_nbest_line("0 |||  ||| nmt= -0.5 ||| -0.5").unwrap();
        assert!(e.tokens.is_empty());
        assert!(parse_nbest_line("0 ||| a ||| nmt= ||| 1").is_err());
        assert!(parse_nbest_line("0 ||| a ||| -1 ||| 1").is_err());
        assert!(parse_nbest_line("x ||| a ||| nmt= 1 ||| 1").is_err());
        assert!(parse_nbest_line("0 ||| a ||| nmt= 1").is_err());
    }

    #[test]
    fn grouping_by_index() {
        let mk = |i| NBestEntry {
            index: i,
            tokens: vec![],
            features: vec![],
            total: 0.0,
        };
        let g = group_nbest(vec![mk(0), mk(0), mk(2)]);
        assert_eq!(g.iter().map(Vec::len).collect::<Vec<_>>(), vec![2, 0, 1]);
    }
}
