//! Recurrent speaker and listener networks.
//!
//! Both agents keep their weights in a [`ParameterStore`] with a fixed
//! segment order, so the same forward code runs on the stored values or on
//! adapted parameters living on a differentiation tape.

mod checkpoint;
mod listener;
mod nn;
mod speaker;

use serde::{Deserialize, Serialize};

pub use checkpoint::{AgentKind, Checkpoint};
pub use listener::{listener_log_probs, Listener};
pub use nn::{categorical_entropy, row_entropy};
pub use speaker::{rollout, teacher_force, Decode, Rollout, Speaker};

use crate::error::{Error, Result};
use crate::grad::ParameterStore;
use crate::world::{CanonicalLanguage, WorldSpec};

/// Sizes shared by a speaker/listener pair.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub attributes: usize,
    pub values: usize,
    pub vocab: usize,
    pub hidden: usize,
    pub embed: usize,
    /// Longest message, EOS included.
    pub max_len: usize,
}

impl Architecture {
    /// Vocabulary and message length follow the world's canonical language.
    pub fn for_world(spec: &WorldSpec, hidden: usize, embed: usize) -> Self {
        let lang = CanonicalLanguage::new(spec);
        Self {
            attributes: spec.attributes,
            values: spec.values,
            vocab: lang.vocab_size(),
            hidden,
            embed,
            max_len: lang.description_len(),
        }
    }

    pub fn input_width(&self) -> usize {
        self.attributes * self.values
    }

    pub fn validate(&self) -> Result<()> {
        if self.attributes == 0 || self.values < 2 {
            return Err(Error::Config(format!(
                "architecture needs attributes >= 1 and values >= 2, got {}x{}",
                self.attributes, self.values
            )));
        }
        if self.vocab < 3 || self.hidden == 0 || self.embed == 0 || self.max_len == 0 {
            return Err(Error::Config(format!(
                "degenerate architecture: vocab {}, hidden {}, embed {}, max_len {}",
                self.vocab, self.hidden, self.embed, self.max_len
            )));
        }
        Ok(())
    }
}

/// Common access to an agent's architecture and weights.
pub trait Agent: Clone {
    fn arch(&self) -> &Architecture;
    fn params(&self) -> &ParameterStore;
    fn params_mut(&mut self) -> &mut ParameterStore;
}

impl Agent for Speaker {
    fn arch(&self) -> &Architecture {
        &self.arch
    }
    fn params(&self) -> &ParameterStore {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }
}

impl Agent for Listener {
    fn arch(&self) -> &Architecture {
        &self.arch
    }
    fn params(&self) -> &ParameterStore {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParameterStore {
        &mut self.params
    }
}

pub(crate) fn expect_segments(store: &ParameterStore, names: &[&str], what: &str) -> Result<()> {
    let found: Vec<&str> = store.names().collect();
    if found != names {
        return Err(Error::Checkpoint(format!(
            "{what} parameters have segments {found:?}, expected {names:?}"
        )));
    }
    Ok(())
}
