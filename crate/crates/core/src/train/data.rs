//! Training samples: an input tensor and a `{0, 1}` target of the same size.
//!
//! On disk a split is a directory with `inputs/NNNN.raw` (preprocessed f32
//! raw images) and `labels/NNNN.png` (0/255 masks). The synthetic generator
//! also writes `rgb/` and `reference/` next to them.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::io::{read_image, read_raw_tensor};
use crate::pipeline::{generate_label, preprocess_input, synth_generate, LabelRecipe, SynthParams};
use crate::tensor::Tensor;

pub const INPUTS_DIR: &str = "inputs";
pub const LABELS_DIR: &str = "labels";
pub const RGB_DIR: &str = "rgb";
pub const REFERENCE_DIR: &str = "reference";

/// File stem of the `i`-th image of a split.
pub fn item_stem(i: usize) -> String {
    format!("{i:04}")
}

pub trait SampleSource: Sync {
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// `(input, target)` for sample `i`.
    fn load(&self, i: usize) -> Result<(Tensor<f32>, Tensor<f32>)>;
}

/// Samples held in memory.
#[derive(Clone, Debug, Default)]
pub struct InMemory(pub Vec<(Tensor<f32>, Tensor<f32>)>);

impl SampleSource for InMemory {
    fn len(&self) -> usize {
        self.0.len()
    }
    fn load(&self, i: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
        Ok(self.0[i].clone())
    }
}

/// A split read from disk one sample at a time.
#[derive(Clone, Debug)]
pub struct DiskDataset {
    pub dir: PathBuf,
    pub items: Vec<(PathBuf, PathBuf)>,
}

impl DiskDataset {
    /// Pairs every `inputs/*.raw` with the label of the same stem.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let inputs = dir.join(INPUTS_DIR);
        let entries = std::fs::read_dir(&inputs).map_err(|e| Error::io(&inputs, e))?;
        let mut stems = Vec::new();
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&inputs, e))?.path();
            if path.extension().is_some_and(|e| e == "raw") {
                if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                    stems.push(stem.to_string());
                }
            }
        }
        stems.sort();
        let mut items = Vec::with_capacity(stems.len());
        for stem in stems {
            let label = dir.join(LABELS_DIR).join(format!("{stem}.png"));
            if !label.exists() {
                return Err(Error::format(&label, "label missing for input"));
            }
            items.push((inputs.join(format!("{stem}.raw")), label));
        }
        Ok(DiskDataset { dir: dir.into(), items })
    }
}

impl SampleSource for DiskDataset {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn load(&self, i: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let (input, label) = &self.items[i];
        let x = read_raw_tensor(input)?;
        let mask = read_image(label)?;
        if mask.channels != 1 {
            return Err(Error::format(label, "labels must be single-channel"));
        }
        let t = mask.to_mask_tensor();
        if t.shape().height != x.shape().height || t.shape().width != x.shape().width {
            return Err(Error::format(label, format!("label is {}, input is {}", t.shape(), x.shape())));
        }
        Ok((x, t))
    }
}

/// One synthetic sample made the way the on-disk corpus is: generate,
/// label with the recipe, preprocess.
pub fn synth_sample(
    seed: u64,
    height: usize,
    width: usize,
    params: &SynthParams,
    recipe: &LabelRecipe,
    multiple: usize,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let (rgb, _) = synth_generate(seed, height, width, params, multiple)?;
    let target = generate_label(&rgb, recipe)?;
    let input = preprocess_input(&rgb, height, width)?;
    Ok((input, target))
}
