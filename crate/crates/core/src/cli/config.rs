use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use knmt::decode::{Combine, DecodeOptions};
use knmt::model::ModelConfig;
use knmt::rerank::{LmConfig, LmKind};
use knmt::train::{Cadence, TrainSchedule};

/// Every tunable of a run, from defaults, a config file and flags.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub schedule: TrainSchedule,
    pub decode: DecodeOptions,
    pub lm: LmConfig,
    pub seed: u64,
    pub min_sentence_len: usize,
    pub max_sentence_len: usize,
    /// 0 disables the ratio filter.
    pub max_length_ratio: f64,
    pub bpe_merges: usize,
    pub bpe_min_frequency: usize,
    pub finetune_lr: f64,
    pub finetune_validate_every: usize,
    pub k: usize,
    pub expansion_cap: usize,
    pub tune_iterations: usize,
    pub tune_restarts: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            schedule: TrainSchedule::default(),
            decode: DecodeOptions::default(),
            lm: LmConfig::default(),
            seed: 1234,
            min_sentence_len: 1,
            max_sentence_len: 100,
            max_length_ratio: 0.0,
            bpe_merges: 30000,
            bpe_min_frequency: 2,
            finetune_lr: 1e-4,
            finetune_validate_every: 5000,
            k: 10,
            expansion_cap: 1000,
            tune_iterations: 10,
            tune_restarts: 3,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| anyhow::anyhow!("bad value {value:?} for {key}"))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => bail!("bad value {value:?} for {key}: expected true or false"),
    }
}

fn cadence(value: &str) -> Result<Cadence> {
    let v = value.trim();
    if let Some(f) = v.strip_suffix("epoch").or_else(|| v.strip_suffix("ep")) {
        return Ok(Cadence::EpochFraction(num("validate_every", f.trim())?));
    }
    Ok(Cadence::Updates(num("validate_every", v)?))
}

fn cadence_name(c: Cadence) -> String {
    match c {
        Cadence::EpochFraction(f) => format!("{f}epoch"),
        Cadence::Updates(n) => n.to_string(),
    }
}

fn opt_name(v: Option<usize>) -> String {
    v.map_or("none".into(), |x| x.to_string())
}

fn opt_num(key: &str, value: &str) -> Result<Option<usize>> {
    if value == "none" {
        Ok(None)
    } else {
        Ok(Some(num(key, value)?))
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.model.set(key, value)? {
            return Ok(());
        }
        let s = &mut self.schedule;
        let d = &mut self.decode;
        match key {
            "seed" => self.seed = num(key, value)?,
            "lr" => s.lr = num(key, value)?,
            "batch_size" => s.batch_size = num(key, value)?,
            "validate_every" => s.validate_every = cadence(value)?,
            "patience" => s.patience = num(key, value)?,
            "max_norm" => s.max_norm = num(key, value)?,
            "max_epochs" => s.max_epochs = num(key, value)?,
            "max_updates" => s.max_updates = opt_num(key, value)?,
            "valid_beam" => s.valid_beam = num(key, value)?,
            "valid_max_len" => s.valid_max_len = num(key, value)?,
            "final_beam" => s.final_beam = opt_num(key, value)?,
            "checked" => s.checked = flag(key, value)?,
            "beam" => d.beam = num(key, value)?,
            "max_len" => d.max_len = num(key, value)?,
            "length_norm" => d.length_norm = flag(key, value)?,
            "factor_k" => d.factor_k = num(key, value)?,
            "ensemble_combine" => {
                d.combine = match value {
                    "arithmetic" => Combine::Arithmetic,
                    "geometric" => Combine::Geometric,
                    _ => bail!("bad value {value:?} for {key}: expected arithmetic or geometric"),
                }
            }
            "lm_kind" => {
                self.lm.kind = LmKind::parse(value).with_context(|| format!("bad value {value:?} for {key}"))?
            }
            "lm_emb_dim" => self.lm.emb_dim = num(key, value)?,
            "lm_hidden_dim" => self.lm.hidden_dim = num(key, value)?,
            "lm_dropout" => self.lm.dropout_p = num(key, value)?,
            "min_sentence_len" => self.min_sentence_len = num(key, value)?,
            "max_sentence_len" => self.max_sentence_len = num(key, value)?,
            "max_length_ratio" => self.max_length_ratio = num(key, value)?,
            "bpe_merges" => self.bpe_merges = num(key, value)?,
            "bpe_min_frequency" => self.bpe_min_frequency = num(key, value)?,
            "finetune_lr" => self.finetune_lr = num(key, value)?,
            "finetune_validate_every" => self.finetune_validate_every = num(key, value)?,
            "k" => self.k = num(key, value)?,
            "expansion_cap" => self.expansion_cap = num(key, value)?,
            "tune_iterations" => self.tune_iterations = num(key, value)?,
            "tune_restarts" => self.tune_restarts = num(key, value)?,
            _ => bail!("unknown configuration key {key:?}"),
        }
        Ok(())
    }

    /// Apply a `key = value` file; `#` starts a comment.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .with_context(|| format!("{}:{}: expected key = value", path.display(), i + 1))?;
            self.set(k.trim(), v.trim())
                .with_context(|| format!("{}:{}", path.display(), i + 1))?;
        }
        Ok(())
    }

    /// Effective values in a stable order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let s = &self.schedule;
        let d = &self.decode;
        let mut out: Vec<(String, String)> = self.model.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let rest = [
            ("seed", self.seed.to_string()),
            ("lr", s.lr.to_string()),
            ("batch_size", s.batch_size.to_string()),
            ("validate_every", cadence_name(s.validate_every)),
            ("patience", s.patience.to_string()),
            ("max_norm", s.max_norm.to_string()),
            ("max_epochs", s.max_epochs.to_string()),
            ("max_updates", opt_name(s.max_updates)),
            ("valid_beam", s.valid_beam.to_string()),
            ("valid_max_len", s.valid_max_len.to_string()),
            ("final_beam", opt_name(s.final_beam)),
            ("checked", s.checked.to_string()),
            ("beam", d.beam.to_string()),
            ("max_len", d.max_len.to_string()),
            ("length_norm", d.length_norm.to_string()),
            ("factor_k", d.factor_k.to_string()),
            (
                "ensemble_combine",
                match d.combine {
                    Combine::Arithmetic => "arithmetic".into(),
                    Combine::Geometric => "geometric".into(),
                },
            ),
            ("lm_kind", self.lm.kind.name().into()),
            ("lm_emb_dim", self.lm.emb_dim.to_string()),
            ("lm_hidden_dim", self.lm.hidden_dim.to_string()),
            ("lm_dropout", self.lm.dropout_p.to_string()),
            ("min_sentence_len", self.min_sentence_len.to_string()),
            ("max_sentence_len", self.max_sentence_len.to_string()),
            ("max_length_ratio", self.max_length_ratio.to_string()),
            ("bpe_merges", self.bpe_merges.to_string()),
            ("bpe_min_frequency", self.bpe_min_frequency.to_string()),
            ("finetune_lr", self.finetune_lr.to_string()),
            ("finetune_validate_every", self.finetune_validate_every.to_string()),
            ("k", self.k.to_string()),
            ("expansion_cap", self.expansion_cap.to_string()),
            ("tune_iterations", self.tune_iterations.to_string()),
            ("tune_restarts", self.tune_restarts.to_string()),
        ];
        out.extend(rest.into_iter().map(|(k, v)| (k.to_string(), v)));
        out
    }

    pub fn echo(&self) {
        for (k, v) in self.entries() {
            log::info!("config {k} = {v}");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entries_roundtrip_through_set() {
        let mut c = RunConfig::default();
        c.set("validate_every", "0.5epoch").unwrap();
        c.set("max_updates", "77").unwrap();
        c.set("emb_dim", "16").unwrap();
        c.set("lm_kind", "simple-rnn").unwrap();
        let mut d = RunConfig::default();
        for (k, v) in c.entries() {
            d.set(&k, &v).unwrap();
        }
        assert_eq!(c, d);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let mut c = RunConfig::default();
        assert!(c.set("emb_dimm", "3").is_err());
        assert!(c.set("beam", "wide").is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.cfg");
        fs::write(&p, "# comment\nbeam = 5\n\npatiense = 3\n").unwrap();
        let err = c.load_file(&p).unwrap_err();
        assert!(format!("{err:#}").contains(":4"), "{err:#}");
        assert_eq!(c.decode.beam, 5);
    }

    #[test]
    fn cadence_forms() {
        assert_eq!(cadence("5000").unwrap(), Cadence::Updates(5000));
        assert_eq!(cadence("0.25epoch").unwrap(), Cadence::EpochFraction(0.25));
        assert_eq!(cadence("0.25 ep").unwrap(), Cadence::EpochFraction(0.25));
        assert!(cadence("often").is_err());
    }
}
