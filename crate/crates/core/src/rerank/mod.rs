//! BLEU, recurrent language models and n-best reranking.

mod bleu;
mod lm;
mod rescore;

pub use bleu::{bleu, bleu_with_order, BleuReport};
pub use lm::{lm_train, random_sentences, LanguageModel, LmConfig, LmKind};
pub use rescore::{
    add_features, dev_bleu, rerank, rescore_nbest, tune_weights, word_count, RerankWeights, Scorer, TuneResult,
};
