//! A desk-scale laboratory for dynamic population-based meta-learning in
//! two-player referential games.
//!
//! The crate is organised bottom-up:
//!
//! - [`grad`]: reverse-mode differentiation (including through one inner
//!   gradient step), parameter stores and Adam.
//! - [`world`]: synthetic attribute-value objects, the compositional
//!   reference language, oracle players and grounding datasets.
//! - [`agents`]: recurrent speaker and listener networks.
//! - [`game`]: episodes, rewards and batched play.
//! - [`train`]: losses, the population buffers, the training loop,
//!   baselines and ablations.
//! - [`eval`]: accuracy, BLEU, cross-play, diversity and robustness reports.

pub mod agents;
pub mod error;
pub mod eval;
pub mod game;
pub mod grad;
pub mod message;
pub mod rng;
pub mod train;
pub mod world;

pub use error::{Error, Result};
