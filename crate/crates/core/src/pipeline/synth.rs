//! Synthetic tissue-like images: a bright, noisy background with dark
//! irregular blobs, plus the exact blob mask.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bands::RowSource;
use super::Raster;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub blobs: usize,
    /// Blob radius range as a fraction of the shorter image side.
    pub min_radius: f64,
    pub max_radius: f64,
    /// Amplitude of the radial boundary wobble, relative to the radius.
    pub roughness: f64,
    pub background: [u8; 2],
    pub tissue: [u8; 2],
    /// Per-pixel noise amplitude inside blobs.
    pub texture: u8,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            blobs: 6,
            min_radius: 0.15,
            max_radius: 0.35,
            roughness: 0.25,
            background: [235, 255],
            tissue: [60, 200],
            texture: 25,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_radius > 0.0 && self.min_radius <= self.max_radius) {
            return Err(Error::config("synth.min_radius", "need 0 < min_radius <= max_radius"));
        }
        if !(0.0..1.0).contains(&self.roughness) {
            return Err(Error::config("synth.roughness", "must lie in [0, 1)"));
        }
        for (field, [lo, hi]) in [("synth.background", self.background), ("synth.tissue", self.tissue)] {
            if lo > hi {
                return Err(Error::config(field, format!("empty range {lo}..{hi}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Blob {
    cy: f64,
    cx: f64,
    radius: f64,
    /// (harmonic, amplitude, phase) terms of the boundary.
    wobble: Vec<(f64, f64, f64)>,
    color: [u8; 3],
}

impl Blob {
    fn reach(&self) -> f64 {
        self.radius * (1.0 + self.wobble.iter().map(|w| w.1).sum::<f64>())
    }

    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let d2 = dy * dy + dx * dx;
        let reach = self.reach();
        if d2 > reach * reach {
            return false;
        }
        let theta = dy.atan2(dx);
        let r = self.radius * (1.0 + self.wobble.iter().map(|&(k, a, p)| a * (k * theta + p).cos()).sum::<f64>());
        d2 < r * r
    }
}

/// A generated scene that renders any band of rows on demand, so images of
/// any size can be streamed straight to disk.
#[derive(Clone, Debug)]
pub struct SynthScene {
    seed: u64,
    height: usize,
    width: usize,
    params: SynthParams,
    blobs: Vec<Blob>,
}

impl SynthScene {
    /// Errors when the parameters are invalid or either side is not a
    /// positive multiple of `multiple`.
    pub fn new(seed: u64, height: usize, width: usize, params: &SynthParams, multiple: usize) -> Result<Self> {
        params.validate()?;
        let multiple = multiple.max(1);
        if height == 0 || width == 0 || height % multiple != 0 || width % multiple != 0 {
            return Err(Error::config(
                "synth.dims",
                format!("{height}x{width} is not a positive multiple of {multiple}"),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX);
        let short = height.min(width) as f64;
        let blobs = (0..params.blobs)
            .map(|_| {
                let radius = short * rng.random_range(params.min_radius..=params.max_radius);
                let per = params.roughness / 3.0;
                let wobble = (2..5)
                    .map(|k| {
                        (k as f64, rng.random_range(0.0..=per), rng.random_range(0.0..std::f64::consts::TAU))
                    })
                    .collect();
                let [lo, hi] = params.tissue;
                let base: u8 = rng.random_range(lo..=hi);
                let tint = |rng: &mut ChaCha8Rng| {
                    base.saturating_add(rng.random_range(0..=20)).saturating_sub(10).clamp(lo, hi)
                };
                Blob {
                    cy: rng.random_range(0.0..height as f64),
                    cx: rng.random_range(0.0..width as f64),
                    radius,
                    wobble,
                    color: [tint(&mut rng), tint(&mut rng), tint(&mut rng)],
                }
            })
            .collect();
        Ok(SynthScene {
            seed,
            height,
            width,
            params: params.clone(),
            blobs,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Index of the last blob covering pixel centre (y, x), if any.
    fn owner(&self, y: usize, x: usize) -> Option<usize> {
        let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
        self.blobs.iter().rposition(|b| b.contains(fy, fx))
    }

    /// Renders one RGB row and its 0/255 mask row. Each row draws its noise
    /// from its own random stream, so bands can be rendered in any order.
    fn render_row(&self, y: usize, rgb: &mut [u8], mask: &mut [u8]) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(y as u64);
        let [blo, bhi] = self.params.background;
        let [tlo, thi] = self.params.tissue;
        let t = self.params.texture as i16;
        for x in 0..self.width {
            let px = &mut rgb[x * 3..x * 3 + 3];
            match self.owner(y, x) {
                Some(i) => {
                    mask[x] = 255;
                    let shade: i16 = rng.random_range(-t..=t);
                    for (p, &c) in px.iter_mut().zip(&self.blobs[i].color) {
                        *p = (c as i16 + shade).clamp(tlo as i16, thi as i16) as u8;
                    }
                }
                None => {
                    mask[x] = 0;
                    let v: u8 = rng.random_range(blo..=bhi);
                    for p in px.iter_mut() {
                        *p = v.saturating_sub(rng.random_range(0..=3)).max(blo);
                    }
                }
            }
        }
    }

    /// Renders rows `y0 .. y0 + rows` as (RGB bytes, mask bytes).
    pub fn render_rows(&self, y0: usize, rows: usize) -> (Vec<u8>, Vec<u8>) {
        let w = self.width;
        let mut rgb = vec![0u8; rows * w * 3];
        let mut mask = vec![0u8; rows * w];
        rgb.par_chunks_mut(w * 3)
            .zip(mask.par_chunks_mut(w))
            .enumerate()
            .for_each(|(i, (r, m))| self.render_row(y0 + i, r, m));
        (rgb, mask)
    }

    pub fn render(&self) -> (Raster, Raster) {
        let (rgb, mask) = self.render_rows(0, self.height);
        (
            Raster { channels: 3, height: self.height, width: self.width, data: rgb },
            Raster { channels: 1, height: self.height, width: self.width, data: mask },
        )
    }
}

impl RowSource for SynthScene {
    fn channels(&self) -> usize {
        3
    }
    fn height(&self) -> usize {
        self.height
    }
    fn width(&self) -> usize {
        self.width
    }
    fn read_rows(&mut self, y0: usize, rows: usize, buf: &mut Vec<u8>) -> Result<()> {
        *buf = self.render_rows(y0, rows).0;
        Ok(())
    }
}

/// Generates an RGB image and its reference mask (0/255), deterministic in
/// `seed`.
pub fn synth_generate(
    seed: u64,
    height: usize,
    width: usize,
    params: &SynthParams,
    multiple: usize,
) -> Result<(Raster, Raster)> {
    Ok(SynthScene::new(seed, height, width, params, multiple)?.render())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_blobs_means_empty_mask() {
        let p = SynthParams { blobs: 0, ..SynthParams::default() };
        let (rgb, mask) = synth_generate(3, 32, 64, &p, 8).unwrap();
        assert_eq!(mask.count_nonzero(), 0);
        assert!(rgb.data.iter().all(|&v| v >= 235));
    }

    #[test]
    fn same_seed_same_image() {
        let p = SynthParams::default();
        let a = synth_generate(11, 64, 128, &p, 8).unwrap();
        let b = synth_generate(11, 64, 128, &p, 8).unwrap();
        let c = synth_generate(12, 64, 128, &p, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn tissue_intensities_in_range() {
        let (rgb, mask) = synth_generate(5, 128, 256, &SynthParams::default(), 8).unwrap();
        assert!(mask.count_nonzero() > 0);
        for (px, &m) in rgb.data.chunks_exact(3).zip(&mask.data) {
            if m > 0 {
                assert!(px.iter().all(|&v| (60..=200).contains(&v)));
            } else {
                assert!(px.iter().all(|&v| v >= 235));
            }
        }
    }

    #[test]
    fn bands_match_whole_render() {
        let scene = SynthScene::new(9, 64, 96, &SynthParams::default(), 8).unwrap();
        let (whole, _) = scene.render_rows(0, 64);
        let mut joined = scene.render_rows(0, 24).0;
        joined.extend(scene.render_rows(24, 40).0);
        assert_eq!(whole, joined);
    }

    #[test]
    fn indivisible_dims_rejected() {
        assert!(synth_generate(1, 60, 64, &SynthParams::default(), 8).is_err());
    }
}
