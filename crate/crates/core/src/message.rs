use serde::{Deserialize, Serialize};

/// Padding token. Never emitted by a speaker; used as the decoder's start input.
pub const PAD: usize = 0;
/// End-of-sequence token.
pub const EOS: usize = 1;
/// First token id that carries content.
pub const FIRST_CONTENT_TOKEN: usize = 2;

/// A bounded sequence of discrete tokens.
///
/// Messages produced by an agent also carry the log-probability of each
/// emitted token and the entropy of each step distribution.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub tokens: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub log_probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub step_entropies: Vec<f64>,
}

impl Message {
    pub fn from_tokens(tokens: Vec<usize>) -> Self {
        Self {
            tokens,
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Tokens with PAD and EOS removed, as used by the text metrics.
    pub fn content(&self) -> Vec<usize> {
        strip_special(&self.tokens)
    }

    pub fn total_log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }
}

pub fn strip_special(tokens: &[usize]) -> Vec<usize> {
    tokens
        .iter()
        .copied()
        .filter(|&t| t >= FIRST_CONTENT_TOKEN)
        .collect()
}
