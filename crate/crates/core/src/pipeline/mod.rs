//! Input preprocessing, tissue-label generation and synthetic data.

mod bands;
mod label;
pub mod morph;
mod preprocess;
mod raster;
mod synth;

use serde::{Deserialize, Serialize};

pub use bands::{map_bands, RowSink, RowSource};
pub use label::{generate_label, generate_label_raster, generate_label_streamed, LabelRecipe, ThresholdOn};
pub use morph::{dilate, erode, fill_holes, median_blur};
pub use preprocess::{luma, preprocess_input, preprocess_streamed};
pub use raster::Raster;
pub use synth::{synth_generate, SynthParams, SynthScene};

use crate::error::{Error, Result};

/// Dataset geometry and split sizes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetSpec {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub crop_height: usize,
    pub crop_width: usize,
}

impl Default for DatasetSpec {
    /// The desk-scale synthetic corpus.
    fn default() -> Self {
        DatasetSpec {
            train: 64,
            val: 4,
            test: 16,
            crop_height: 512,
            crop_width: 2048,
        }
    }
}

impl DatasetSpec {
    /// The reference gigapixel geometry and split sizes.
    pub fn gigapixel() -> Self {
        DatasetSpec {
            train: 256,
            val: 5,
            test: 81,
            crop_height: 16000,
            crop_width: 64000,
        }
    }

    /// Checks split sizes and that the crop tiles the network's strides and
    /// the label downsampling factor.
    pub fn validate(&self, multiple: usize) -> Result<()> {
        if self.train == 0 {
            return Err(Error::config("dataset.train", "at least one training image is required"));
        }
        if self.val == 0 {
            return Err(Error::config("dataset.val", "validation split must be non-empty"));
        }
        for (field, v) in [("dataset.crop_height", self.crop_height), ("dataset.crop_width", self.crop_width)] {
            if v == 0 || v % multiple != 0 {
                return Err(Error::config(field, format!("{v} is not a positive multiple of {multiple}")));
            }
        }
        Ok(())
    }

    /// `(split name, count)` in a fixed order.
    pub fn splits(&self) -> [(&'static str, usize); 3] {
        [("train", self.train), ("val", self.val), ("test", self.test)]
    }
}
