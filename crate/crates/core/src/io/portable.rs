//! PNG / PPM / PGM via the `image` crate, and extension-based dispatch that
//! sends `.raw` files to the raw format.

use std::path::Path;

use image::{ColorType, DynamicImage, ImageFormat};

use super::raw::{read_raw_raster, write_raw_raster};
use crate::error::{Error, Result};
use crate::pipeline::Raster;

fn is_raw(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("raw"))
}

/// Reads an 8-bit image. Grayscale files give one channel; everything else
/// is converted to three-channel RGB (alpha dropped).
pub fn read_image(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    if is_raw(path) {
        return read_raw_raster(path);
    }
    let img = image::open(path).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(g) => Raster::from_vec(1, h, w, g.into_raw()),
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_) => {
            Raster::from_vec(1, h, w, img.to_luma8().into_raw())
        }
        other => Raster::from_vec(3, h, w, other.to_rgb8().into_raw()),
    }
}

/// Writes a one- or three-channel raster; the format follows the extension.
pub fn write_image(path: impl AsRef<Path>, img: &Raster) -> Result<()> {
    let path = path.as_ref();
    if is_raw(path) {
        return write_raw_raster(path, img);
    }
    let color = match img.channels {
        1 => ColorType::L8,
        3 => ColorType::Rgb8,
        c => return Err(Error::format(path, format!("cannot write {c}-channel images"))),
    };
    let format = ImageFormat::from_path(path).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })?;
    let (w, h) = (dim(path, img.width)?, dim(path, img.height)?);
    image::save_buffer_with_format(path, &img.data, w, h, color, format).map_err(|source| Error::Image {
        path: path.into(),
        source,
    })
}

fn dim(path: &Path, v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::format(path, format!("dimension {v} is too large; use a .raw file")))
}
