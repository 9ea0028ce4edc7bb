//! Losses, population buffers and optimisation steps.

mod algorithm;
mod buffer;
mod config;
mod losses;
mod record;
mod steps;

pub use buffer::PopulationBuffer;
pub use config::{
    BaselineConfig, Bias, ListenerSupLoss, LossConfig, MetaVariant, ModelConfig, OptimConfig,
    ScheduleConfig, TrainConfig, WorldConfig,
};
pub use losses::{
    interactive_losses, listener_kl, listener_supervised_loss, speaker_kl,
    speaker_supervised_loss, InteractiveTerms,
};
pub use steps::{
    interactive_step, meta_listener_gradient, meta_listener_step, meta_speaker_gradient,
    meta_speaker_step, rounds_from, supervised_listener_step, supervised_speaker_step, KlAnchor,
    MetaContext, MetaUpdate, Side, StepStats, Trainable,
};

pub use algorithm::{
    Ablation, Experiment, IterationRecord, IterationState, Method, Observer, Population,
    RunOutcome, Stop,
};
pub use record::{
    load_population, load_summary, metrics_csv, read_metrics, write_atomic, BufferLog, RunSummary,
    RunWriter, METRICS_HEADER,
};
