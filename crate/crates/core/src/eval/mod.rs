//! Measurements over trained agents: accuracy, BLEU, cross-play,
//! population diversity, oracle play, corpus statistics and robustness.

mod accuracy;
mod population;
mod stats;
pub mod svg;
mod text;

pub use accuracy::{referential_accuracy, Accuracy};
pub use population::{
    bleu_curve, crossplay, diversity_curve, oracle_eval, robustness_eval, CrossPlay,
    DiversityCurve, DiversityPoint, EvalSettings, OracleEval, Pair, Robustness,
};
pub use stats::{welch_t_test, Summary, TTest};
pub use text::{bleu, corpus_stats, describe_all, speaker_bleu, Bleu, CorpusStats, BLEU_EPSILON};
