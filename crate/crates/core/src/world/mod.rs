//! Synthetic object worlds, the canonical reference language and its
//! oracle speaker/listener, distractor sampling, and grounding datasets.

mod dataset;
mod distractors;
mod language;
mod spec;

pub use dataset::GroundingDataset;
pub use distractors::{sample_distractors, DistractorMode};
pub use language::CanonicalLanguage;
pub use spec::{similarity, Object, World, WorldSplit, WorldSpec, MAX_UNIVERSE};
