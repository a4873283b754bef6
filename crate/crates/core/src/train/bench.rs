use std::time::Instant;

use serde::Serialize;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::data::synth_sample;
use super::step::{loss_and_grads, sample_loss};
use crate::error::Result;
use crate::model::{init_params, ArchSpec};
use crate::pipeline::{LabelRecipe, SynthParams};

#[derive(Clone, Debug, Serialize)]
pub struct BenchSize {
    pub height: usize,
    pub width: usize,
    pub pixels: u64,
    /// Wall time of each step, validation included, in milliseconds.
    pub samples_ms: Vec<f64>,
    pub mean_ms: Option<f64>,
    pub median_ms: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub sizes: Vec<BenchSize>,
    /// Least-squares fit of median step time against pixel count.
    pub fit: Option<LinearFit>,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    if xs.len() < 2 || xs.len() != ys.len() {
        return None;
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit {
        slope,
        intercept: my - slope * mx,
        r2,
    })
}

fn median(v: &[f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let m = s.len() / 2;
    Some(if s.len() % 2 == 1 { s[m] } else { (s[m - 1] + s[m]) / 2.0 })
}

impl BenchSize {
    pub fn from_samples(height: usize, width: usize, samples_ms: Vec<f64>) -> Self {
        let mean_ms = (!samples_ms.is_empty()).then(|| samples_ms.iter().sum::<f64>() / samples_ms.len() as f64);
        BenchSize {
            height,
            width,
            pixels: (height * width) as u64,
            median_ms: median(&samples_ms),
            mean_ms,
            samples_ms,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BenchConfig {
    pub sizes: Vec<(usize, usize)>,
    pub steps: usize,
    /// Untimed steps run first at each size.
    pub warmup: usize,
    pub val_every: usize,
    pub val_images: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

/// Times `steps` training steps at each size, after `warmup` untimed ones,
/// on synthetic data held in memory, validating on `val_images` images
/// every `val_every` steps.
pub fn bench(arch: &ArchSpec, config: &BenchConfig) -> Result<BenchReport> {
    let mut sizes = Vec::with_capacity(config.sizes.len());
    let multiple = arch.downsampling().max(LabelRecipe::default().downsample_factor);
    for &(h, w) in &config.sizes {
        let mut samples = Vec::with_capacity(config.steps);
        if config.steps > 0 {
            let synth = SynthParams::default();
            let recipe = LabelRecipe::default();
            let (x, t) = synth_sample(config.seed, h, w, &synth, &recipe, multiple)?;
            let val = (0..config.val_images)
                .map(|i| synth_sample(config.seed + 1 + i as u64, h, w, &synth, &recipe, multiple))
                .collect::<Result<Vec<_>>>()?;
            let mut params = init_params::<f32>(arch, config.seed);
            let mut adam = AdamState::new(arch);
            for step in 1..=config.warmup + config.steps {
                let t0 = Instant::now();
                let out = loss_and_grads(arch, params, x.clone(), t.clone())?;
                params = out.params;
                adam_step(&mut params, &out.grads, &mut adam, &config.adam)?;
                if step % config.val_every.max(1) == 0 {
                    for (vx, vt) in &val {
                        sample_loss(arch, &params, vx, vt)?;
                    }
                }
                if step > config.warmup {
                    samples.push(t0.elapsed().as_secs_f64() * 1e3);
                }
            }
        }
        sizes.push(BenchSize::from_samples(h, w, samples));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = sizes
        .iter()
        .filter_map(|s| s.median_ms.map(|m| (s.pixels as f64, m)))
        .unzip();
    Ok(BenchReport {
        fit: linear_fit(&xs, &ys),
        sizes,
    })
}
