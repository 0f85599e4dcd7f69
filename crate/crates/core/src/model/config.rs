use crate::error::{Error, Result};
use crate::layers::{CgruDecoder, GruCell, InitMode, OutputHead, OutputMode, TyingMode};

/// Arrangement of the hidden-to-output layer in a factored model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum H2oMode {
    /// One o-layer feeding both the lemma and the factor softmax.
    Shared,
    /// An independent o-layer per output stream.
    Separate,
}

impl H2oMode {
    pub fn name(self) -> &'static str {
        match self {
            H2oMode::Shared => "shared",
            H2oMode::Separate => "separate",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "shared" => Some(H2oMode::Shared),
            "separate" => Some(H2oMode::Separate),
            _ => None,
        }
    }
}

/// Architecture hyperparameters. Vocabulary sizes include the four
/// reserved entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub emb_dim: usize,
    pub enc_hidden: usize,
    pub dec_hidden: usize,
    /// Hidden size of the additive attention; 0 selects the annotation size.
    pub alignment_dim: usize,
    pub tying: TyingMode,
    pub init_mode: InitMode,
    pub output_mode: OutputMode,
    pub factored: bool,
    pub h2o: H2oMode,
    pub dropout_p: f64,
    pub src_vocab: usize,
    pub tgt_vocab: usize,
    pub factor_vocab: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            emb_dim: 200,
            enc_hidden: 500,
            dec_hidden: 500,
            alignment_dim: 0,
            tying: TyingMode::Tied2,
            init_mode: InitMode::MeanState,
            output_mode: OutputMode::Conditional,
            factored: false,
            h2o: H2oMode::Shared,
            dropout_p: 0.2,
            src_vocab: 0,
            tgt_vocab: 0,
            factor_vocab: 0,
        }
    }
}

pub const CONFIG_KEYS: [&str; 13] = [
    "emb_dim",
    "enc_hidden",
    "dec_hidden",
    "alignment_dim",
    "tying_mode",
    "init_mode",
    "output_mode",
    "factored",
    "h2o_mode",
    "dropout_p",
    "src_vocab",
    "tgt_vocab",
    "factor_vocab",
];

pub(crate) fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("invalid value {value:?} for {key}")))
}

pub(crate) fn parse_flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("invalid value {value:?} for {key}"))),
    }
}

impl ModelConfig {
    /// Annotation (context) size: forward and backward states concatenated.
    pub fn annotation_dim(&self) -> usize {
        2 * self.enc_hidden
    }

    pub fn effective_alignment_dim(&self) -> usize {
        if self.alignment_dim == 0 {
            self.annotation_dim()
        } else {
            self.alignment_dim
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("emb_dim", self.emb_dim),
            ("enc_hidden", self.enc_hidden),
            ("dec_hidden", self.dec_hidden),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::config(format!("dropout_p {} outside [0, 1)", self.dropout_p)));
        }
        for (name, v) in [("src_vocab", self.src_vocab), ("tgt_vocab", self.tgt_vocab)] {
            if v <= 4 {
                return Err(Error::config(format!("{name} {v} leaves no room beyond the reserved ids")));
            }
        }
        if self.tying == TyingMode::Tied3 && self.src_vocab != self.tgt_vocab {
            return Err(Error::config(format!(
                "tied3 needs one joint vocabulary, got {} and {}",
                self.src_vocab, self.tgt_vocab
            )));
        }
        if self.factored && self.factor_vocab <= 4 {
            return Err(Error::config("factored model needs a factor vocabulary with at least one tag"));
        }
        Ok(())
    }

    /// Closed-form scalar parameter count.
    ///
    /// ```text
    /// emb    = E·(Vs + Vt + Vt)  none | E·(Vs + Vt)  tied2 | E·V  tied3
    /// enc    = 2 · [3(E·He + He² + He) + 6He]
    /// dec    = [D·Hd + Hd]mean + 3(E·Hd + Hd² + Hd) + (Hd + D + 2)·A + 3(D·Hd + Hd² + Hd)
    /// out    = Hd·E + [D·E]cond + E + Vt
    /// factor = Vf·E + Vf (+ Hd·E + [D·E]cond + E when separate)
    /// ```
    /// with `D = 2He` and `A` the alignment size.
    pub fn param_count(&self) -> usize {
        let e = self.emb_dim;
        let d = self.annotation_dim();
        let a = self.effective_alignment_dim();
        let emb = match self.tying {
            TyingMode::None => e * (self.src_vocab + 2 * self.tgt_vocab),
            TyingMode::Tied2 => e * (self.src_vocab + self.tgt_vocab),
            TyingMode::Tied3 => e * self.src_vocab,
        };
        let enc = 2 * GruCell::param_count(e, self.enc_hidden, true);
        let dec = CgruDecoder::param_count(e, d, self.dec_hidden, a, self.init_mode);
        let out = OutputHead::param_count(self.output_mode, self.dec_hidden, d, e, self.tgt_vocab);
        let factor = if self.factored {
            let proj = self.factor_vocab * e + self.factor_vocab;
            match self.h2o {
                H2oMode::Shared => proj,
                H2oMode::Separate => {
                    proj + OutputHead::param_count(self.output_mode, self.dec_hidden, d, e, 0)
                }
            }
        } else {
            0
        };
        emb + enc + dec + out + factor
    }

    /// Every field as `(key, value)` text, in [`CONFIG_KEYS`] order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("emb_dim", self.emb_dim.to_string()),
            ("enc_hidden", self.enc_hidden.to_string()),
            ("dec_hidden", self.dec_hidden.to_string()),
            ("alignment_dim", self.alignment_dim.to_string()),
            ("tying_mode", self.tying.name().to_string()),
            ("init_mode", self.init_mode.name().to_string()),
            ("output_mode", self.output_mode.name().to_string()),
            ("factored", self.factored.to_string()),
            ("h2o_mode", self.h2o.name().to_string()),
            ("dropout_p", self.dropout_p.to_string()),
            ("src_vocab", self.src_vocab.to_string()),
            ("tgt_vocab", self.tgt_vocab.to_string()),
            ("factor_vocab", self.factor_vocab.to_string()),
        ]
    }

    /// Set one field from text. Returns `Ok(false)` for keys that are not
    /// model keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        let bad = || Error::config(format!("invalid value {value:?} for {key}"));
        match key {
            "emb_dim" => self.emb_dim = parse_value(key, value)?,
            "enc_hidden" => self.enc_hidden = parse_value(key, value)?,
            "dec_hidden" => self.dec_hidden = parse_value(key, value)?,
            "hidden" => {
                self.enc_hidden = parse_value(key, value)?;
                self.dec_hidden = self.enc_hidden;
            }
            "alignment_dim" => self.alignment_dim = parse_value(key, value)?,
            "tying_mode" => self.tying = TyingMode::parse(value).ok_or_else(bad)?,
            "init_mode" => self.init_mode = InitMode::parse(value).ok_or_else(bad)?,
            "output_mode" => self.output_mode = OutputMode::parse(value).ok_or_else(bad)?,
            "factored" => self.factored = parse_flag(key, value)?,
            "h2o_mode" => self.h2o = H2oMode::parse(value).ok_or_else(bad)?,
            "dropout_p" => self.dropout_p = parse_value(key, value)?,
            "src_vocab" => self.src_vocab = parse_value(key, value)?,
            "tgt_vocab" => self.tgt_vocab = parse_value(key, value)?,
            "factor_vocab" => self.factor_vocab = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }
}
