//! Tissue-mask generation from an RGB crop.

use serde::{Deserialize, Serialize};

use super::bands::{map_bands, RowSink, RowSource};
use super::morph::{dilate, erode, fill_holes, median_blur};
use super::preprocess::luma;
use super::Raster;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which value the background threshold is compared against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdOn {
    /// Mean of the colour channels, before grayscale conversion.
    ChannelMean,
    /// The grayscale value.
    Gray,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LabelRecipe {
    pub downsample_factor: usize,
    /// Pixels brighter than this (strictly) are background.
    pub background_threshold: u8,
    pub threshold_on: ThresholdOn,
    pub median_kernel: usize,
    /// Side of the square structuring element.
    pub morph_size: usize,
    pub erode_iterations: usize,
    pub dilate_iterations: usize,
}

impl Default for LabelRecipe {
    fn default() -> Self {
        LabelRecipe {
            downsample_factor: 8,
            background_threshold: 230,
            threshold_on: ThresholdOn::ChannelMean,
            median_kernel: 5,
            morph_size: 3,
            erode_iterations: 2,
            dilate_iterations: 2,
        }
    }
}

/// Rows of the downsampled mask processed per band in the windowed steps.
const BAND_ROWS: usize = 256;

impl LabelRecipe {
    pub fn validate(&self) -> Result<()> {
        if self.downsample_factor == 0 {
            return Err(Error::config("recipe.downsample_factor", "must be at least 1"));
        }
        if self.median_kernel < 3 || self.median_kernel % 2 == 0 {
            return Err(Error::config(
                "recipe.median_kernel",
                format!("must be odd and at least 3, got {}", self.median_kernel),
            ));
        }
        if self.morph_size == 0 || self.morph_size % 2 == 0 {
            return Err(Error::config(
                "recipe.morph_size",
                format!("must be odd, got {}", self.morph_size),
            ));
        }
        Ok(())
    }

    /// Decides one downsampled pixel from its rounded per-channel means.
    fn tissue(&self, means: &[u8]) -> bool {
        let gray = || match means.len() {
            1 | 2 => means[0],
            _ => luma(means[0], means[1], means[2]).round() as u8,
        };
        let bright = match self.threshold_on {
            ThresholdOn::ChannelMean => {
                let c = means.len().min(3);
                let total: u32 = means[..c].iter().map(|&v| v as u32).sum();
                total > self.background_threshold as u32 * c as u32
            }
            ThresholdOn::Gray => gray() > self.background_threshold,
        };
        !bright && gray() != 0
    }

    /// Median blur, erosion and dilation run band by band; hole filling
    /// needs the whole mask.
    fn clean(&self, small: &Raster) -> Result<Raster> {
        let r = self.morph_size / 2;
        let median = map_bands(small, BAND_ROWS, self.median_kernel / 2, |b| {
            median_blur(b, self.median_kernel).expect("validated kernel")
        });
        let eroded = map_bands(&median, BAND_ROWS, r * self.erode_iterations, |b| {
            erode(b, self.morph_size, self.erode_iterations).expect("validated size")
        });
        let dilated = map_bands(&eroded, BAND_ROWS, r * self.dilate_iterations, |b| {
            dilate(b, self.morph_size, self.dilate_iterations).expect("validated size")
        });
        fill_holes(&dilated)
    }
}

/// Area-mean downsampling fused with the background and non-zero
/// thresholds, reading `factor` rows at a time.
fn downsample_tissue(src: &mut impl RowSource, recipe: &LabelRecipe) -> Result<Raster> {
    let f = recipe.downsample_factor;
    let (c, h, w) = (src.channels(), src.height(), src.width());
    let (sh, sw) = (h / f, w / f);
    let n = (f * f) as u32;
    let mut small = Raster::new(1, sh, sw);
    let mut band = Vec::new();
    let mut sums = vec![0u32; sw * c];
    let mut means = vec![0u8; c];
    for by in 0..sh {
        src.read_rows(by * f, f, &mut band)?;
        sums.iter_mut().for_each(|s| *s = 0);
        for row in band.chunks_exact(w * c) {
            for (x, px) in row.chunks_exact(c).enumerate() {
                let s = &mut sums[(x / f) * c..(x / f + 1) * c];
                for (acc, &v) in s.iter_mut().zip(px) {
                    *acc += v as u32;
                }
            }
        }
        for bx in 0..sw {
            for (m, &s) in means.iter_mut().zip(&sums[bx * c..(bx + 1) * c]) {
                *m = ((s + n / 2) / n) as u8;
            }
            if recipe.tissue(&means) {
                small.data[by * sw + bx] = 255;
            }
        }
    }
    Ok(small)
}

/// Runs the recipe over a streamed image, writing 0/255 mask rows at full
/// resolution to `sink`. Only the downsampled mask is held in memory.
pub fn generate_label_streamed(
    src: &mut impl RowSource,
    recipe: &LabelRecipe,
    sink: &mut impl RowSink,
) -> Result<()> {
    recipe.validate()?;
    let f = recipe.downsample_factor;
    let (h, w) = (src.height(), src.width());
    if h % f != 0 || w % f != 0 || h == 0 || w == 0 {
        return Err(Error::config(
            "crop",
            format!("{h}x{w} is not a positive multiple of the downsample factor {f}"),
        ));
    }
    let small = downsample_tissue(src, recipe)?;
    let small = recipe.clean(&small)?;
    let mut rows = vec![0u8; w * f];
    for y in 0..small.height {
        let line = &mut rows[..w];
        for (x, px) in line.iter_mut().enumerate() {
            *px = if small.data[y * small.width + x / f] > 0 { 255 } else { 0 };
        }
        let (first, rest) = rows.split_at_mut(w);
        for chunk in rest.chunks_exact_mut(w) {
            chunk.copy_from_slice(first);
        }
        sink.write_rows(&rows)?;
    }
    Ok(())
}

/// The recipe's mask as a 0/255 single-channel raster.
pub fn generate_label_raster(rgb: &Raster, recipe: &LabelRecipe) -> Result<Raster> {
    let mut out = Vec::with_capacity(rgb.height * rgb.width);
    generate_label_streamed(&mut &*rgb, recipe, &mut out)?;
    Raster::from_vec(1, rgb.height, rgb.width, out)
}

/// The recipe's mask as a `1x1xHxW` tensor of zeros and ones.
pub fn generate_label(rgb: &Raster, recipe: &LabelRecipe) -> Result<Tensor<f32>> {
    Ok(generate_label_raster(rgb, recipe)?.to_mask_tensor())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_crop_is_background() {
        let img = Raster::filled(3, 64, 128, 255);
        let m = generate_label(&img, &LabelRecipe::default()).unwrap();
        assert_eq!(m.sum(), 0.0);
    }

    #[test]
    fn mid_gray_crop_is_tissue() {
        let img = Raster::filled(3, 64, 128, 128);
        let m = generate_label(&img, &LabelRecipe::default()).unwrap();
        assert_eq!(m.sum(), (64 * 128) as f64);
    }

    #[test]
    fn black_pixels_are_not_tissue() {
        let img = Raster::new(3, 64, 64);
        let m = generate_label(&img, &LabelRecipe::default()).unwrap();
        assert_eq!(m.sum(), 0.0);
    }

    #[test]
    fn indivisible_crop_rejected() {
        let img = Raster::filled(3, 60, 64, 128);
        assert!(generate_label(&img, &LabelRecipe::default()).is_err());
    }

    #[test]
    fn threshold_order_matters_for_coloured_pixels() {
        // channel mean 231 but luma rounds to 230: background only when thresholding
        // the channel mean.
        let px = [255u8, 219, 219];
        assert!(luma(px[0], px[1], px[2]).round() <= 230.0);
        let mut img = Raster::new(3, 16, 16);
        for p in img.data.chunks_exact_mut(3) {
            p.copy_from_slice(&px);
        }
        let mean = LabelRecipe::default();
        let gray = LabelRecipe {
            threshold_on: ThresholdOn::Gray,
            ..LabelRecipe::default()
        };
        assert_eq!(generate_label(&img, &mean).unwrap().sum(), 0.0);
        assert_eq!(generate_label(&img, &gray).unwrap().sum(), 256.0);
    }

    #[test]
    fn invalid_recipes_rejected() {
        let bad = LabelRecipe {
            median_kernel: 4,
            ..LabelRecipe::default()
        };
        assert!(bad.validate().is_err());
        let bad = LabelRecipe {
            downsample_factor: 0,
            ..LabelRecipe::default()
        };
        assert!(bad.validate().is_err());
    }
}
