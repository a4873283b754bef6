//! Binary morphology on single-channel rasters. Any non-zero pixel is
//! foreground; outputs are 0/255.

use std::collections::VecDeque;

use rayon::prelude::*;

use super::Raster;
use crate::error::{Error, Result};

fn require_gray(img: &Raster, op: &str) -> Result<()> {
    if img.channels != 1 {
        return Err(Error::config(op, format!("expects one channel, got {}", img.channels)));
    }
    Ok(())
}

fn fg(v: u8) -> u32 {
    u32::from(v != 0)
}

/// Median over a `kernel x kernel` window with edge replication. On binary
/// input the median is foreground exactly when more than half the window is.
pub fn median_blur(img: &Raster, kernel: usize) -> Result<Raster> {
    require_gray(img, "median_blur")?;
    if kernel % 2 == 0 || kernel == 0 {
        return Err(Error::config("median_kernel", format!("must be odd, got {kernel}")));
    }
    let (h, w) = (img.height, img.width);
    let r = (kernel / 2) as isize;
    let majority = (kernel * kernel / 2) as u32;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut out = Raster::new(1, h, w);
    out.data.par_chunks_mut(w).enumerate().for_each(|(y, dst)| {
        let mut col = vec![0u32; w];
        for dy in -r..=r {
            let row = img.row(clamp(y as isize + dy, h));
            for (c, &v) in col.iter_mut().zip(row) {
                *c += fg(v);
            }
        }
        for (x, d) in dst.iter_mut().enumerate() {
            let mut total = 0;
            for dx in -r..=r {
                total += col[clamp(x as isize + dx, w)];
            }
            *d = if total > majority { 255 } else { 0 };
        }
    });
    Ok(out)
}

fn check_se(size: usize) -> Result<()> {
    if size % 2 == 0 {
        return Err(Error::config("morph_size", format!("structuring element must be odd, got {size}")));
    }
    Ok(())
}

/// One pass of a square min (`want_all`) or max filter along rows, then
/// columns. Pixels outside the image are ignored.
fn square_pass(img: &Raster, size: usize, want_all: bool) -> Raster {
    let (h, w) = (img.height, img.width);
    let r = size / 2;
    let decide = |count: usize, len: usize| if want_all { count == len } else { count > 0 };
    let mut rows = Raster::new(1, h, w);
    rows.data.par_chunks_mut(w).enumerate().for_each(|(y, dst)| {
        let src = img.row(y);
        let mut prefix = vec![0usize; w + 1];
        for x in 0..w {
            prefix[x + 1] = prefix[x] + fg(src[x]) as usize;
        }
        for (x, d) in dst.iter_mut().enumerate() {
            let lo = x.saturating_sub(r);
            let hi = (x + r + 1).min(w);
            *d = if decide(prefix[hi] - prefix[lo], hi - lo) { 255 } else { 0 };
        }
    });
    let mut out = Raster::new(1, h, w);
    out.data.par_chunks_mut(w).enumerate().for_each(|(y, dst)| {
        let lo = y.saturating_sub(r);
        let hi = (y + r + 1).min(h);
        let mut counts = vec![0usize; w];
        for yy in lo..hi {
            for (c, &v) in counts.iter_mut().zip(rows.row(yy)) {
                *c += fg(v) as usize;
            }
        }
        for (d, &c) in dst.iter_mut().zip(&counts) {
            *d = if decide(c, hi - lo) { 255 } else { 0 };
        }
    });
    out
}

/// Minimum over a `size x size` square, repeated `iterations` times.
pub fn erode(img: &Raster, size: usize, iterations: usize) -> Result<Raster> {
    require_gray(img, "erode")?;
    check_se(size)?;
    let mut cur = img.binarized();
    for _ in 0..iterations {
        cur = square_pass(&cur, size, true);
    }
    Ok(cur)
}

/// Maximum over a `size x size` square, repeated `iterations` times.
pub fn dilate(img: &Raster, size: usize, iterations: usize) -> Result<Raster> {
    require_gray(img, "dilate")?;
    check_se(size)?;
    let mut cur = img.binarized();
    for _ in 0..iterations {
        cur = square_pass(&cur, size, false);
    }
    Ok(cur)
}

/// Sets to foreground every background region that is not 4-connected to
/// the image border.
pub fn fill_holes(img: &Raster) -> Result<Raster> {
    require_gray(img, "fill_holes")?;
    let (h, w) = (img.height, img.width);
    let mut outside = vec![false; h * w];
    let mut queue = VecDeque::new();
    let seed = |y: usize, x: usize, outside: &mut Vec<bool>, queue: &mut VecDeque<usize>| {
        let i = y * w + x;
        if img.data[i] == 0 && !outside[i] {
            outside[i] = true;
            queue.push_back(i);
        }
    };
    for x in 0..w {
        seed(0, x, &mut outside, &mut queue);
        seed(h - 1, x, &mut outside, &mut queue);
    }
    for y in 0..h {
        seed(y, 0, &mut outside, &mut queue);
        seed(y, w - 1, &mut outside, &mut queue);
    }
    while let Some(i) = queue.pop_front() {
        let (y, x) = (i / w, i % w);
        if y > 0 {
            seed(y - 1, x, &mut outside, &mut queue);
        }
        if y + 1 < h {
            seed(y + 1, x, &mut outside, &mut queue);
        }
        if x > 0 {
            seed(y, x - 1, &mut outside, &mut queue);
        }
        if x + 1 < w {
            seed(y, x + 1, &mut outside, &mut queue);
        }
    }
    let data = outside.iter().map(|&o| if o { 0 } else { 255 }).collect();
    Raster::from_vec(1, h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_rows(rows: &[&str]) -> Raster {
        let h = rows.len();
        let w = rows[0].len();
        let data = rows
            .iter()
            .flat_map(|r| r.bytes().map(|b| if b == b'#' { 255 } else { 0 }))
            .collect();
        Raster::from_vec(1, h, w, data).unwrap()
    }

    #[test]
    fn opening_removes_isolated_pixel() {
        let img = from_rows(&[".....", ".....", "..#..", ".....", "....."]);
        let opened = dilate(&erode(&img, 3, 1).unwrap(), 3, 1).unwrap();
        assert_eq!(opened.count_nonzero(), 0);
    }

    #[test]
    fn ring_fills_to_disk() {
        let ring = from_rows(&[".......", ".#####.", ".#...#.", ".#...#.", ".#####.", "......."]);
        let solid = from_rows(&[".......", ".#####.", ".#####.", ".#####.", ".#####.", "......."]);
        assert_eq!(fill_holes(&ring).unwrap(), solid);
    }

    #[test]
    fn border_touching_background_is_kept() {
        let open = from_rows(&["..#..", ".#.#.", ".#.#.", "....."]);
        assert_eq!(fill_holes(&open).unwrap(), open);
    }

    #[test]
    fn even_kernels_rejected() {
        let img = Raster::new(1, 4, 4);
        assert!(median_blur(&img, 4).is_err());
        assert!(erode(&img, 2, 1).is_err());
        assert!(dilate(&img, 4, 1).is_err());
    }

    #[test]
    fn median_keeps_uniform_fields() {
        let img = Raster::filled(1, 9, 11, 255);
        assert_eq!(median_blur(&img, 5).unwrap(), img);
        let dark = Raster::new(1, 9, 11);
        assert_eq!(median_blur(&dark, 5).unwrap(), dark);
    }

    #[test]
    fn erosion_ignores_outside_pixels() {
        let img = Raster::filled(1, 5, 5, 255);
        assert_eq!(erode(&img, 3, 2).unwrap(), img);
    }
}
