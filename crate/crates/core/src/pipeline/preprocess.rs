use super::{Raster, RowSource};
use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Luminance with the 0.299 / 0.587 / 0.114 weights.
#[inline]
pub fn luma(r: u8, g: u8, b: u8) -> f64 {
    0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64
}

fn gray_of(px: &[u8]) -> f64 {
    match px.len() {
        1 => px[0] as f64,
        _ => luma(px[0], px[1], px[2]),
    }
}

fn check_geometry(channels: usize, height: usize, width: usize, crop_height: usize, crop_width: usize) -> Result<()> {
    if !matches!(channels, 1 | 3 | 4) {
        return Err(Error::config("input", format!("unsupported channel count {channels}")));
    }
    if height < crop_height || width < crop_width {
        return Err(Error::config(
            "crop",
            format!("image is {height}x{width}, smaller than the {crop_height}x{crop_width} crop"),
        ));
    }
    Ok(())
}

fn invert_row(row: &[u8], channels: usize, crop_width: usize, out: &mut Vec<f32>) {
    out.extend(row.chunks_exact(channels).take(crop_width).map(|px| ((255.0 - gray_of(px)) / 255.0) as f32));
}

/// Grayscale, invert, scale to `[0, 1]` and crop the top-left
/// `crop_height x crop_width` region into a `1x1xHxW` tensor. Bright
/// background maps near 0 and dark tissue towards 1.
pub fn preprocess_input(rgb: &Raster, crop_height: usize, crop_width: usize) -> Result<Tensor<f32>> {
    check_geometry(rgb.channels, rgb.height, rgb.width, crop_height, crop_width)?;
    let shape = Shape::new(1, 1, crop_height, crop_width)?;
    let mut data = Vec::with_capacity(shape.numel());
    for y in 0..crop_height {
        invert_row(rgb.row(y), rgb.channels, crop_width, &mut data);
    }
    Tensor::from_vec(shape, data)
}

/// [`preprocess_input`] over a row source, `band_rows` rows at a time.
/// `emit` receives the cropped output rows in order.
pub fn preprocess_streamed(
    src: &mut impl RowSource,
    crop_height: usize,
    crop_width: usize,
    band_rows: usize,
    mut emit: impl FnMut(&[f32]) -> Result<()>,
) -> Result<()> {
    let c = src.channels();
    check_geometry(c, src.height(), src.width(), crop_height, crop_width)?;
    let row_len = src.width() * c;
    let (mut buf, mut out) = (Vec::new(), Vec::new());
    let mut y = 0;
    while y < crop_height {
        let rows = band_rows.max(1).min(crop_height - y);
        src.read_rows(y, rows, &mut buf)?;
        out.clear();
        for row in buf.chunks_exact(row_len) {
            invert_row(row, c, crop_width, &mut out);
        }
        emit(&out)?;
        y += rows;
    }
    Ok(())
}
