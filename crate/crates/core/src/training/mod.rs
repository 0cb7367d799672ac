//! Gradients, Adam, the learning-rate schedule and the epoch loop.

mod adam;
mod backprop;
mod params;
mod trainer;

pub use adam::{adam_step, lr_schedule, AdamConfig, AdamState};
pub use backprop::{backward, forward_cost, ForwardTrace, NoiseSource};
pub use params::{LadderParams, ParamBlock, ParamGroup};
pub use trainer::{error_rate, evaluate, train, EpochMetrics, EvalMode, Evaluation, TrainConfig, TrainOutcome, Trainer, EVAL_CHUNK};
