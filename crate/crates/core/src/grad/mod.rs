//! Reverse-mode differentiation, parameter storage and optimisers.

mod adam;
mod meta;
mod params;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use meta::{grad_through_update, sgd_step, MetaGradient, MetaOrder};
pub use params::{flatten, global_norm, ParameterStore, Segment};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
