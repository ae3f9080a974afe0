//! Text scores used by filtration, diagnostics and evaluation.

use thiserror::Error;

use crate::providers::ProviderError;
use crate::textproc::TextError;

mod bleu;
mod meteor;
mod overlap;
mod rouge;
mod squad;
mod wmd;

pub use bleu::{bleu, bleu_stats, median, self_bleu, BleuConfig, BleuStats, Smoothing};
pub use meteor::{meteor_lite, meteor_lite_tokens, MeteorParams};
pub use overlap::{lemma_overlap, set_overlap, OverlapMode};
pub use rouge::{lcs_len, rouge_l};
pub use squad::{normalize_answer, squad_em_f1, EmF1};
pub use wmd::{transport_cost, wmd_from_bags, word_movers_distance};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("self-BLEU needs at least 2 questions, got {0}")]
    TooFewQuestions(usize),
    #[error("word mover's distance undefined: every {0} token is out of vocabulary")]
    UndefinedDistance(&'static str),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Provider(#[from] ProviderError),
}

impl MetricError {
    pub fn provider_error(&self) -> Option<&ProviderError> {
        match self {
            MetricError::Provider(e) => Some(e),
            MetricError::Text(e) => e.provider_error(),
            _ => None,
        }
    }
}
