//! Row-band access for images too large to hold whole, and banded
//! execution of windowed operators.

use rayon::prelude::*;

use super::Raster;
use crate::error::Result;

/// Anything that can hand out horizontal bands of an interleaved 8-bit image.
pub trait RowSource {
    fn channels(&self) -> usize;
    fn height(&self) -> usize;
    fn width(&self) -> usize;
    /// Replaces `buf` with rows `y0 .. y0 + rows`, interleaved.
    fn read_rows(&mut self, y0: usize, rows: usize, buf: &mut Vec<u8>) -> Result<()>;
}

/// Consumer of whole rows, written top to bottom.
pub trait RowSink {
    fn write_rows(&mut self, rows: &[u8]) -> Result<()>;
}

impl RowSource for &Raster {
    fn channels(&self) -> usize {
        self.channels
    }
    fn height(&self) -> usize {
        self.height
    }
    fn width(&self) -> usize {
        self.width
    }
    fn read_rows(&mut self, y0: usize, rows: usize, buf: &mut Vec<u8>) -> Result<()> {
        let n = self.row_len();
        buf.clear();
        buf.extend_from_slice(&self.data[y0 * n..(y0 + rows) * n]);
        Ok(())
    }
}

impl RowSink for Vec<u8> {
    fn write_rows(&mut self, rows: &[u8]) -> Result<()> {
        self.extend_from_slice(rows);
        Ok(())
    }
}

/// Applies a windowed operator band by band.
///
/// Each band of `band_rows` output rows is computed from the band plus up to
/// `halo` rows of real image above and below it. When `op` only reads pixels
/// within `halo` rows of each output pixel, and treats the edges of its own
/// input as image borders, the stitched result equals `op(img)` exactly.
pub fn map_bands(img: &Raster, band_rows: usize, halo: usize, op: impl Fn(&Raster) -> Raster + Sync) -> Raster {
    let band_rows = band_rows.max(1);
    if band_rows >= img.height {
        return op(img);
    }
    let n = img.row_len();
    let starts: Vec<usize> = (0..img.height).step_by(band_rows).collect();
    let pieces: Vec<Vec<u8>> = starts
        .par_iter()
        .map(|&y0| {
            let y1 = (y0 + band_rows).min(img.height);
            let top = y0.saturating_sub(halo);
            let bottom = (y1 + halo).min(img.height);
            let band = Raster {
                channels: img.channels,
                height: bottom - top,
                width: img.width,
                data: img.data[top * n..bottom * n].to_vec(),
            };
            let out = op(&band);
            out.data[(y0 - top) * n..(y1 - top) * n].to_vec()
        })
        .collect();
    Raster {
        channels: img.channels,
        height: img.height,
        width: img.width,
        data: pieces.concat(),
    }
}
