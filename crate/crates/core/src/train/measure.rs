use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::step::loss_and_grads;
use crate::error::{Error, Result};
use crate::memplan::estimate_training_peak;
use crate::model::{init_params, ArchSpec};
use crate::sysmem;
use crate::tensor::{Shape, Tensor};

/// Measured process memory around one real training step.
#[derive(Clone, Debug, Serialize)]
pub struct MeasuredStep {
    pub height: usize,
    pub width: usize,
    /// Resident bytes before any image data exists: code, runtime, thread
    /// stacks, allocator state.
    pub baseline_rss: u64,
    /// High-water mark over creating the inputs and running the step.
    pub peak_rss: u64,
    pub predicted: u64,
    pub workers: usize,
    pub loss: f64,
}

impl MeasuredStep {
    /// Peak attributable to the step, net of the baseline.
    pub fn step_bytes(&self) -> u64 {
        self.peak_rss.saturating_sub(self.baseline_rss)
    }
}

/// Runs one training step (forward, BCE, backward, Adam) on random data and
/// reports the resident-memory high-water mark next to the planner's
/// prediction. Meant to run in a fresh process.
pub fn measure_training_step(arch: &ArchSpec, height: usize, width: usize, seed: u64) -> Result<MeasuredStep> {
    let workers = rayon::current_num_threads();
    let predicted = estimate_training_peak(arch, height, width, 4, workers)?.peak_bytes;
    sysmem::tighten_allocator();
    let mut params = init_params::<f32>(arch, seed);
    let mut adam = AdamState::new(arch);
    // Warm the thread pool so its stacks count towards the baseline.
    rayon::broadcast(|_| ());
    let baseline = sysmem::sample().ok_or_else(|| Error::config("measure", "process memory is not observable here"))?;
    sysmem::reset_peak();

    let shape = Shape::new(1, 1, height, width)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let image = Tensor::from_fn(shape, |_, _, _, _| rng.random::<f32>());
    let target = Tensor::from_fn(shape, |_, _, y, x| if (y / 64 + x / 64) % 2 == 0 { 1.0 } else { 0.0 });
    let out = loss_and_grads(arch, params, image, target)?;
    params = out.params;
    adam_step(&mut params, &out.grads, &mut adam, &AdamConfig::default())?;
    let loss = out.loss;
    drop(out.grads);
    let after = sysmem::sample().expect("sampled above");
    Ok(MeasuredStep {
        height,
        width,
        baseline_rss: baseline.rss,
        peak_rss: after.peak_rss,
        predicted,
        workers,
        loss,
    })
}
