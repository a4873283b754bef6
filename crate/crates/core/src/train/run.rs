use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::data::SampleSource;
use super::metrics::{dice_at, EvalReport, DICE_THRESHOLD};
use super::step::{loss_and_grads, sample_loss};
use crate::error::{Error, Result};
use crate::io::{save_checkpoint, Checkpoint};
use crate::model::{forward, init_params, ArchSpec, ModelParams};
use crate::sysmem;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub max_steps: usize,
    /// Validate every this many steps.
    pub val_every: usize,
    pub seed: u64,
    pub checkpoint_dir: PathBuf,
    /// Steps at the start of training whose peak RSS is logged.
    pub peak_sample_steps: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 1,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            max_steps: 2000,
            val_every: 1,
            seed: 0,
            checkpoint_dir: PathBuf::from("checkpoints"),
            peak_sample_steps: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be positive and finite"));
        }
        if self.batch_size != 1 {
            return Err(Error::config("train.batch_size", "must be 1"));
        }
        for (field, b) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(field, "must lie in [0, 1)"));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("train.epsilon", "must be positive"));
        }
        if self.val_every == 0 {
            return Err(Error::config("train.val_every", "must be at least 1"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// One line of the training log. Step 0 is the initial validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss: Option<f64>,
    pub wall_ms: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub peak_rss_bytes: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub val_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub checkpoint: Option<String>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub steps: usize,
    pub best_step: usize,
    pub best_val_loss: f64,
    /// Checkpoints written on validation improvements, in order.
    pub trail: Vec<PathBuf>,
    pub best_path: PathBuf,
    pub last_path: PathBuf,
    pub log_path: PathBuf,
    pub params: ModelParams<f32>,
}

pub const INIT_CHECKPOINT: &str = "init.ckpt";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";
pub const LOG_FILE: &str = "log.jsonl";

/// Mean BCE over a split.
pub fn validation_loss(arch: &ArchSpec, params: &ModelParams<f32>, set: &dyn SampleSource) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Empty("validation set".into()));
    }
    let mut total = 0.0;
    for i in 0..set.len() {
        let (x, t) = set.load(i)?;
        total += sample_loss(arch, params, &x, &t)?;
    }
    Ok(total / set.len() as f64)
}

/// Per-image Dice of thresholded predictions.
pub fn evaluate(arch: &ArchSpec, params: &ModelParams<f32>, set: &dyn SampleSource) -> Result<EvalReport> {
    let mut scores = Vec::with_capacity(set.len());
    for i in 0..set.len() {
        let (x, t) = set.load(i)?;
        let p = forward(arch, params, &x)?;
        scores.push(dice_at(&p, &t, DICE_THRESHOLD)?);
    }
    EvalReport::from_dice(scores, DICE_THRESHOLD)
}

/// Evaluates a checkpoint, refusing one trained for another architecture.
pub fn evaluate_checkpoint(ck: &Checkpoint, expected: &ArchSpec, set: &dyn SampleSource) -> Result<EvalReport> {
    if &ck.arch != expected {
        return Err(Error::ArchMismatch);
    }
    evaluate(&ck.arch, &ck.params, set)
}

struct Log {
    path: PathBuf,
    out: BufWriter<File>,
}

impl Log {
    fn create(path: PathBuf) -> Result<Self> {
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Log {
            path,
            out: BufWriter::new(file),
        })
    }

    fn write(&mut self, rec: &LogRecord) -> Result<()> {
        let line = serde_json::to_string(rec).expect("log records serialize");
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LogRecord>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                reason: e.to_string(),
            })
        })
        .collect()
}

fn checkpoint(arch: &ArchSpec, params: &ModelParams<f32>, adam: &AdamState<f32>, step: usize, val_loss: f64) -> Checkpoint {
    Checkpoint {
        arch: arch.clone(),
        params: params.clone(),
        step: step as u64,
        val_loss,
        adam: Some(adam.clone()),
    }
}

/// Trains from a fresh initialization. Writes `init.ckpt`, one
/// `step-NNNNNN.ckpt` per validation improvement, `best.ckpt` (the current
/// validation-loss minimizer), `last.ckpt` and `log.jsonl` to the
/// checkpoint directory. `observer` sees every log record.
pub fn train(
    arch: &ArchSpec,
    config: &TrainConfig,
    train_set: &dyn SampleSource,
    val_set: &dyn SampleSource,
    mut observer: impl FnMut(&LogRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    let dir = &config.checkpoint_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut log = Log::create(dir.join(LOG_FILE))?;
    let adam_cfg = config.adam();

    let mut params = init_params::<f32>(arch, config.seed);
    let mut adam = AdamState::new(arch);
    let started = Instant::now();
    let mut best_val = validation_loss(arch, &params, val_set)?;
    let mut best_step = 0;
    let init_path = dir.join(INIT_CHECKPOINT);
    let best_path = dir.join(BEST_CHECKPOINT);
    let ck = checkpoint(arch, &params, &adam, 0, best_val);
    save_checkpoint(&init_path, &ck)?;
    save_checkpoint(&best_path, &ck)?;
    let rec = LogRecord {
        step: 0,
        loss: None,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
        peak_rss_bytes: None,
        val_loss: Some(best_val),
        checkpoint: Some(INIT_CHECKPOINT.into()),
    };
    log.write(&rec)?;
    observer(&rec);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = Vec::new();
    let mut trail = Vec::new();
    let mut last_val = best_val;
    for step in 1..=config.max_steps {
        if order.is_empty() {
            order = (0..train_set.len()).collect();
            order.shuffle(&mut rng);
            order.reverse();
        }
        let idx = order.pop().expect("refilled above");
        let sample_peak = step <= config.peak_sample_steps;
        if sample_peak {
            sysmem::reset_peak();
        }
        let t0 = Instant::now();
        let (x, t) = train_set.load(idx)?;
        let out = loss_and_grads(arch, params, x, t)?;
        if !out.loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        params = out.params;
        adam_step(&mut params, &out.grads, &mut adam, &adam_cfg)?;
        drop(out.grads);
        let peak = if sample_peak { sysmem::sample().map(|s| s.peak_rss) } else { None };

        let mut rec = LogRecord {
            step,
            loss: Some(out.loss),
            wall_ms: 0.0,
            peak_rss_bytes: peak,
            val_loss: None,
            checkpoint: None,
        };
        if step % config.val_every == 0 || step == config.max_steps {
            let v = validation_loss(arch, &params, val_set)?;
            rec.val_loss = Some(v);
            last_val = v;
            if v < best_val {
                best_val = v;
                best_step = step;
                let name = format!("step-{step:06}.ckpt");
                let ck = checkpoint(arch, &params, &adam, step, v);
                save_checkpoint(dir.join(&name), &ck)?;
                save_checkpoint(&best_path, &ck)?;
                trail.push(dir.join(&name));
                rec.checkpoint = Some(name);
            }
        }
        rec.wall_ms = t0.elapsed().as_secs_f64() * 1e3;
        log.write(&rec)?;
        observer(&rec);
    }
    let last_path = dir.join(LAST_CHECKPOINT);
    save_checkpoint(&last_path, &checkpoint(arch, &params, &adam, config.max_steps, last_val))?;
    Ok(TrainOutcome {
        steps: config.max_steps,
        best_step,
        best_val_loss: best_val,
        trail,
        best_path,
        last_path,
        log_path: log.path.clone(),
        params,
    })
}
