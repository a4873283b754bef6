use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// 8-bit image with interleaved channels, stored row-major (`y`, `x`, `c`).
#[derive(Clone, PartialEq, Eq)]
pub struct Raster {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl std::fmt::Debug for Raster {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Raster({}x{}x{})", self.height, self.width, self.channels)
    }
}

impl Raster {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Raster {
            channels,
            height,
            width,
            data: vec![0; channels * height * width],
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: u8) -> Self {
        Raster {
            channels,
            height,
            width,
            data: vec![value; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        let expected = channels * height * width;
        if data.len() != expected {
            return Err(Error::ElementCount {
                shape: [1, channels, height, width],
                expected,
                actual: data.len(),
            });
        }
        Ok(Raster {
            channels,
            height,
            width,
            data,
        })
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn row_len(&self) -> usize {
        self.width * self.channels
    }

    pub fn row(&self, y: usize) -> &[u8] {
        let n = self.row_len();
        &self.data[y * n..(y + 1) * n]
    }

    /// Top-left crop.
    pub fn crop(&self, height: usize, width: usize) -> Result<Raster> {
        if height > self.height || width > self.width {
            return Err(Error::InvalidConfig {
                field: "crop".into(),
                reason: format!(
                    "image is {}x{}, smaller than the {height}x{width} crop",
                    self.height, self.width
                ),
            });
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for y in 0..height {
            data.extend_from_slice(&self.row(y)[..width * self.channels]);
        }
        Raster::from_vec(self.channels, height, width, data)
    }

    /// Single-channel image where foreground (non-zero) becomes 255.
    pub fn binarized(&self) -> Raster {
        Raster {
            data: self.data.iter().map(|&v| if v > 0 { 255 } else { 0 }).collect(),
            ..self.clone()
        }
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// `{0, 1}` mask tensor (`1x1xHxW`) from a single-channel raster.
    pub fn to_mask_tensor(&self) -> Tensor<f32> {
        assert_eq!(self.channels, 1, "mask rasters are single-channel");
        let shape = Shape::new(1, 1, self.height, self.width).expect("non-empty raster");
        let data = self.data.iter().map(|&v| if v > 0 { 1.0 } else { 0.0 }).collect();
        Tensor::from_vec(shape, data).expect("sized from raster")
    }

    /// Single-channel 0/255 raster from a mask or probability tensor,
    /// foreground where the value is at least `threshold`.
    pub fn from_tensor_threshold(t: &Tensor<f32>, threshold: f32) -> Raster {
        let s = t.shape();
        let data = t.plane(0, 0).iter().map(|&v| if v >= threshold { 255 } else { 0 }).collect();
        Raster {
            channels: 1,
            height: s.height,
            width: s.width,
            data,
        }
    }
}
