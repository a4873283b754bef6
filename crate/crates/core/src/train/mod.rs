//! Training: Adam, BCE, Dice, the validation-selected training loop,
//! evaluation, throughput benchmarking and memory measurement.

mod adam;
mod bench;
mod data;
mod measure;
mod metrics;
mod run;
mod step;

pub use crate::ops::{bce_backward, bce_forward, BCE_EPSILON};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use bench::{bench, linear_fit, BenchConfig, BenchReport, BenchSize, LinearFit};
pub use data::{
    item_stem, synth_sample, DiskDataset, InMemory, SampleSource, INPUTS_DIR, LABELS_DIR, REFERENCE_DIR, RGB_DIR,
};
pub use measure::{measure_training_step, MeasuredStep};
pub use metrics::{dice, dice_at, EvalReport, DICE_THRESHOLD};
pub use run::{
    evaluate, evaluate_checkpoint, read_log, train, validation_loss, LogRecord, TrainConfig, TrainOutcome,
    BEST_CHECKPOINT, INIT_CHECKPOINT, LAST_CHECKPOINT, LOG_FILE,
};
pub use step::{loss_and_grads, sample_loss, StepOutput};
