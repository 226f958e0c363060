//! Grayscale conversion, resizing, gamma, histogram equalization and CLAHE.

use crate::error::{invalid, Result};
use crate::grid::{Grid, Image};

pub type RgbImage = Grid<[f32; 3]>;

pub const LUMA_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

const LEVELS: usize = 256;

pub fn rgb_to_gray(rgb: &RgbImage) -> Image {
    rgb.map(|p| LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2])
}

/// Source coordinate for output index `o` under half-pixel alignment.
fn source_coord(o: usize, src: usize, dst: usize) -> f64 {
    ((o as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64)
}

/// Bilinear resampling with half-pixel alignment and clamped edges.
pub fn resize_bilinear(img: &Image, height: usize, width: usize) -> Result<Image> {
    if img.is_empty() || height == 0 || width == 0 {
        return Err(invalid!("cannot resize to or from an empty image"));
    }
    if img.dims() == (height, width) {
        return Ok(img.clone());
    }
    let (h, w) = img.dims();
    let xs: Vec<(usize, usize, f32)> = (0..width)
        .map(|x| {
            let s = source_coord(x, w, width);
            let x0 = s.floor() as usize;
            (x0, (x0 + 1).min(w - 1), (s - x0 as f64) as f32)
        })
        .collect();
    Ok(Grid::from_fn(height, width, |y, x| {
        let sy = source_coord(y, h, height);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = (sy - y0 as f64) as f32;
        let (x0, x1, fx) = xs[x];
        let top = img.get(y0, x0) + (img.get(y0, x1) - img.get(y0, x0)) * fx;
        let bot = img.get(y1, x0) + (img.get(y1, x1) - img.get(y1, x0)) * fx;
        top + (bot - top) * fy
    }))
}

/// Nearest-neighbour resampling; keeps masks binary.
pub fn resize_nearest<T: Clone>(grid: &Grid<T>, height: usize, width: usize) -> Result<Grid<T>> {
    if grid.is_empty() || height == 0 || width == 0 {
        return Err(invalid!("cannot resize to or from an empty grid"));
    }
    let (h, w) = grid.dims();
    let pick = |o: usize, src: usize, dst: usize| (((o as f64 + 0.5) * src as f64 / dst as f64) as usize).min(src - 1);
    Ok(Grid::from_fn(height, width, |y, x| grid.get(pick(y, h, height), pick(x, w, width)).clone()))
}

/// `x -> x^gamma` on [0, 1].
pub fn gamma_correct(img: &Image, gamma: f64) -> Result<Image> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(invalid!("gamma must be positive, got {gamma}"));
    }
    if gamma == 1.0 {
        return Ok(img.clone());
    }
    let g = gamma as f32;
    Ok(img.map(|&v| v.clamp(0.0, 1.0).powf(g)))
}

fn level(v: f32) -> usize {
    (v.clamp(0.0, 1.0) * (LEVELS - 1) as f32).round() as usize
}

/// Global histogram equalization: each level maps to its cumulative share.
pub fn hist_equalize(img: &Image) -> Image {
    let mut hist = [0u64; LEVELS];
    for &v in img.data() {
        hist[level(v)] += 1;
    }
    let n = img.len().max(1) as f64;
    let mut lut = [0f32; LEVELS];
    let mut acc = 0u64;
    for (l, &c) in hist.iter().enumerate() {
        acc += c;
        lut[l] = (acc as f64 / n) as f32;
    }
    img.map(|&v| lut[level(v)])
}

/// Clips a tile histogram at `limit`, spreading the excess evenly over all
/// levels (remainder to the lowest levels).
fn clip_histogram(hist: &mut [u64; LEVELS], limit: u64) {
    let mut excess = 0u64;
    for h in hist.iter_mut() {
        if *h > limit {
            excess += *h - limit;
            *h = limit;
        }
    }
    let (each, rest) = (excess / LEVELS as u64, excess % LEVELS as u64);
    for (i, h) in hist.iter_mut().enumerate() {
        *h += each + u64::from((i as u64) < rest);
    }
}

/// Contrast-limited adaptive histogram equalization.
///
/// The image is cut into `tiles_y x tiles_x` tiles. Each tile gets a clipped
/// histogram mapping, with the clip at `clip_limit` times the mean bin count.
/// Pixels blend the mappings of the four nearest tile centres bilinearly.
pub fn clahe(img: &Image, clip_limit: f64, tiles_y: usize, tiles_x: usize) -> Result<Image> {
    if !(clip_limit >= 1.0) {
        return Err(invalid!("CLAHE clip limit must be at least 1, got {clip_limit}"));
    }
    let (h, w) = img.dims();
    if tiles_y == 0 || tiles_x == 0 || tiles_y > h || tiles_x > w {
        return Err(invalid!("CLAHE grid {tiles_y}x{tiles_x} does not fit a {h}x{w} image"));
    }
    let ybounds: Vec<usize> = (0..=tiles_y).map(|t| t * h / tiles_y).collect();
    let xbounds: Vec<usize> = (0..=tiles_x).map(|t| t * w / tiles_x).collect();
    let mut luts = vec![[0f32; LEVELS]; tiles_y * tiles_x];
    for ty in 0..tiles_y {
        for tx in 0..tiles_x {
            let mut hist = [0u64; LEVELS];
            for y in ybounds[ty]..ybounds[ty + 1] {
                for x in xbounds[tx]..xbounds[tx + 1] {
                    hist[level(*img.get(y, x))] += 1;
                }
            }
            let n = ((ybounds[ty + 1] - ybounds[ty]) * (xbounds[tx + 1] - xbounds[tx])) as u64;
            let limit = (clip_limit * n as f64 / LEVELS as f64).max(1.0);
            if limit < n as f64 {
                clip_histogram(&mut hist, limit as u64);
            }
            let lut = &mut luts[ty * tiles_x + tx];
            let mut acc = 0u64;
            for (l, &c) in hist.iter().enumerate() {
                acc += c;
                lut[l] = (acc as f64 / n as f64) as f32;
            }
        }
    }
    let centre = |bounds: &[usize], t: usize| (bounds[t] + bounds[t + 1]) as f64 / 2.0 - 0.5;
    // neighbouring tile pair and blend weight along one axis
    let axis = |p: usize, bounds: &[usize], tiles: usize| -> (usize, usize, f32) {
        let p = p as f64;
        if p <= centre(bounds, 0) {
            return (0, 0, 0.0);
        }
        if p >= centre(bounds, tiles - 1) {
            return (tiles - 1, tiles - 1, 0.0);
        }
        let t = (0..tiles - 1).find(|&t| p < centre(bounds, t + 1)).unwrap_or(tiles - 2);
        let (c0, c1) = (centre(bounds, t), centre(bounds, t + 1));
        (t, t + 1, ((p - c0) / (c1 - c0)) as f32)
    };
    let cols: Vec<_> = (0..w).map(|x| axis(x, &xbounds, tiles_x)).collect();
    Ok(Grid::from_fn(h, w, |y, x| {
        let (y0, y1, fy) = axis(y, &ybounds, tiles_y);
        let (x0, x1, fx) = cols[x];
        let l = level(*img.get(y, x));
        let m = |ty: usize, tx: usize| luts[ty * tiles_x + tx][l];
        let top = m(y0, x0) * (1.0 - fx) + m(y0, x1) * fx;
        let bot = m(y1, x0) * (1.0 - fx) + m(y1, x1) * fx;
        top * (1.0 - fy) + bot * fy
    }))
}
