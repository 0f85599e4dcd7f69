mod commands;
mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

pub use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "knmt", version, about = "Attentive GRU encoder-decoder translation toolkit")]
pub struct Cli {
    /// `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override one configuration key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub beam: Option<usize>,
    #[arg(long = "max-len", global = true)]
    pub max_len: Option<usize>,
    #[arg(long = "length-norm", global = true, value_name = "BOOL")]
    pub length_norm: Option<bool>,
    #[arg(long = "factor-k", global = true)]
    pub factor_k: Option<usize>,
    /// Reinflection candidates per sentence.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Worker threads for sentence-level decoding.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Training files `PREFIX.src` and `PREFIX.tgt`.
    #[arg(long = "train", value_name = "PREFIX", conflicts_with = "manifest")]
    pub train: Option<PathBuf>,
    /// Lines of `PREFIX<TAB>WEIGHT`; weighted corpora are upsampled.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Validation files `PREFIX.src` and `PREFIX.tgt`.
    #[arg(long = "valid", value_name = "PREFIX")]
    pub valid: PathBuf,
    /// Target side is `lemma|factors` text.
    #[arg(long)]
    pub factored: bool,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    #[arg(long, conflicts_with = "ensemble")]
    pub model: Option<PathBuf>,
    /// Comma-separated checkpoints decoded as one ensemble.
    #[arg(long, value_delimiter = ',')]
    pub ensemble: Vec<PathBuf>,
}

#[derive(Args, Debug, Clone)]
pub struct FeatureArgs {
    /// Language model feature; repeatable.
    #[arg(long = "lm", value_name = "NAME=CHECKPOINT")]
    pub lms: Vec<String>,
    /// Score word-level text with the language models.
    #[arg(long = "lm-word-level")]
    pub lm_word_level: bool,
    /// Translation model feature (needs --source); repeatable.
    #[arg(long = "scorer-model", value_name = "NAME=CHECKPOINT")]
    pub scorers: Vec<String>,
    /// Source sentences of the n-best lists.
    #[arg(long)]
    pub source: Option<PathBuf>,
    /// Add the word count feature `words`.
    #[arg(long)]
    pub words: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a translation model.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        output: PathBuf,
        /// Tab-separated validation log.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Train one replica per seed in parallel.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
    },
    /// Continue training a checkpoint on new data.
    Finetune {
        #[arg(long)]
        init: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Translate tokenized, segmented sentences.
    Translate {
        #[command(flatten)]
        models: ModelArgs,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        greedy: bool,
        /// Also write the full beam as an n-best list.
        #[arg(long)]
        nbest: Option<PathBuf>,
        /// Leave subword units joined by `@@`.
        #[arg(long = "keep-bpe")]
        keep_bpe: bool,
    },
    /// Add back-translated target monolingual text to a parallel corpus.
    Backtranslate {
        /// Reverse-direction model(s).
        #[command(flatten)]
        models: ModelArgs,
        #[arg(long = "train", value_name = "PREFIX")]
        train: PathBuf,
        #[arg(long)]
        mono: PathBuf,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        greedy: bool,
        /// Writes `PREFIX.src` and `PREFIX.tgt`.
        #[arg(long, value_name = "PREFIX")]
        output: PathBuf,
    },
    /// Learn BPE merges.
    BpeLearn {
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long)]
        merges: Option<usize>,
        /// Inputs are `lemma|factors` text; learn on lemmas.
        #[arg(long)]
        factored: bool,
        #[arg(long)]
        output: PathBuf,
    },
    /// Segment text with learned merges.
    BpeApply {
        #[arg(long)]
        codes: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        factored: bool,
    },
    /// Corpus BLEU of a hypothesis file.
    ScoreBleu {
        #[arg(long)]
        hyp: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Undo subword segmentation on both sides first.
        #[arg(long)]
        detok: bool,
    },
    /// Train a recurrent language model.
    LmTrain {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        valid: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long = "word-level")]
        word_level: bool,
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Per-sentence log-probabilities and perplexity.
    LmScore {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long = "word-level")]
        word_level: bool,
    },
    /// Rescore n-best lists with extra features and weights.
    Rerank {
        #[arg(long)]
        nbest: PathBuf,
        #[arg(long)]
        weights: PathBuf,
        #[command(flatten)]
        features: FeatureArgs,
        /// 1-best output.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long = "nbest-out")]
        nbest_out: Option<PathBuf>,
        #[arg(long = "keep-bpe")]
        keep_bpe: bool,
    },
    /// Tune feature weights for dev BLEU.
    TuneWeights {
        #[arg(long)]
        nbest: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[command(flatten)]
        features: FeatureArgs,
        /// Features to tune; all present features by default.
        #[arg(long = "features", value_delimiter = ',')]
        names: Vec<String>,
        #[arg(long)]
        output: PathBuf,
    },
    /// Turn lemma|factor output into surface words.
    Reinflect {
        #[arg(long, conflicts_with = "tagged")]
        dict: Option<PathBuf>,
        /// `word|lemma|factors` text to build the dictionary from.
        #[arg(long)]
        tagged: Option<PathBuf>,
        #[arg(long = "save-dict")]
        save_dict: Option<PathBuf>,
        /// `lemma|factors` sentences.
        #[arg(long)]
        input: PathBuf,
        /// n-best list of surface candidates.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print the parameter count of the configured model.
    Params,
}

impl Cli {
    pub fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(p) = &self.config {
            cfg.load_file(p)?;
        }
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .with_context(|| format!("--set expects KEY=VALUE, got {o:?}"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        let flags = [
            ("seed", self.seed.map(|v| v.to_string())),
            ("beam", self.beam.map(|v| v.to_string())),
            ("max_len", self.max_len.map(|v| v.to_string())),
            ("length_norm", self.length_norm.map(|v| v.to_string())),
            ("factor_k", self.factor_k.map(|v| v.to_string())),
            ("k", self.k.map(|v| v.to_string())),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        Ok(cfg)
    }
}

pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => e.exit(),
        _ => anyhow::anyhow!(e.to_string().lines().next().unwrap_or("bad arguments").trim_start_matches("error: ").to_string()),
    })?;
    let cfg = cli.run_config()?;
    cfg.echo();
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot size the worker pool")?;
    }
    commands::dispatch(&cli, &cfg)
}
