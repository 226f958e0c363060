//! Procedural vessel-like images for tests and desk-scale training.
//!
//! Vessels are quadratic Bezier curves drawn as dark tubes over a bright,
//! slightly shaded background. Thick vessels get full contrast; thin ones
//! can be made faint to mimic capillaries that a model struggles with.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::io::{save_image8, save_mask};
use super::{DatasetTag, SegmentationSample};
use crate::error::{invalid, Result};
use crate::grid::{Grid, Mask};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub height: usize,
    pub width: usize,
    pub thick_vessels: usize,
    /// Tube radius range for thick vessels, in pixels.
    pub thick_radius: (f64, f64),
    pub thick_contrast: f64,
    pub thin_vessels: usize,
    pub thin_radius: f64,
    pub thin_contrast: f64,
    pub noise: f64,
    /// Adds a circular field of view; pixels outside are black.
    pub fov: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            height: 48,
            width: 48,
            thick_vessels: 3,
            thick_radius: (1.2, 2.2),
            thick_contrast: 0.45,
            thin_vessels: 3,
            thin_radius: 0.6,
            thin_contrast: 0.3,
            noise: 0.02,
            fov: false,
        }
    }
}

impl SyntheticConfig {
    pub fn sized(height: usize, width: usize) -> Self {
        SyntheticConfig {
            height,
            width,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.height < 4 || self.width < 4 {
            return Err(invalid!("synthetic images need at least 4x4 pixels"));
        }
        let (lo, hi) = self.thick_radius;
        if !(lo > 0.0 && lo <= hi && self.thin_radius > 0.0) {
            return Err(invalid!("vessel radii must be positive with lo <= hi"));
        }
        for c in [self.thick_contrast, self.thin_contrast] {
            if !(0.0..=1.0).contains(&c) {
                return Err(invalid!("vessel contrast must lie in [0, 1]"));
            }
        }
        if !(self.noise >= 0.0) {
            return Err(invalid!("noise level must be non-negative"));
        }
        Ok(())
    }
}

/// Result of drawing one vessel class: distance-based darkening and label.
struct Layer {
    darkening: Grid<f32>,
    mask: Mask,
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx - p.0, a.1 + t * dy - p.1);
    (cx * cx + cy * cy).sqrt()
}

fn random_point(rng: &mut ChaCha8Rng, h: usize, w: usize) -> (f64, f64) {
    (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64))
}

/// Draws `count` curves of radius drawn from `radius` into one layer.
fn draw_layer(rng: &mut ChaCha8Rng, h: usize, w: usize, count: usize, radius: (f64, f64), contrast: f64) -> Layer {
    let mut darkening = Grid::filled(h, w, 0.0f32);
    let mut mask = Grid::filled(h, w, false);
    for _ in 0..count {
        let p0 = random_point(rng, h, w);
        let p1 = random_point(rng, h, w);
        let p2 = random_point(rng, h, w);
        let r = if radius.0 == radius.1 {
            radius.0
        } else {
            rng.random_range(radius.0..radius.1)
        };
        let steps = 4 * (h + w);
        let pts: Vec<(f64, f64)> = (0..=steps)
            .map(|i| {
                let t = i as f64 / steps as f64;
                let (a, b, c) = ((1.0 - t) * (1.0 - t), 2.0 * t * (1.0 - t), t * t);
                (a * p0.0 + b * p1.0 + c * p2.0, a * p0.1 + b * p1.1 + c * p2.1)
            })
            .collect();
        let reach = r + 1.5;
        for seg in pts.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let x0 = (a.0.min(b.0) - reach).floor().max(0.0) as usize;
            let x1 = ((a.0.max(b.0) + reach).ceil() as usize).min(w - 1);
            let y0 = (a.1.min(b.1) - reach).floor().max(0.0) as usize;
            let y1 = ((a.1.max(b.1) + reach).ceil() as usize).min(h - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let d = segment_distance((x as f64 + 0.5, y as f64 + 0.5), a, b);
                    // soft edge one pixel wide around the labelled core
                    let shade = (contrast * (1.0 - (d - r).max(0.0)).clamp(0.0, 1.0)) as f32;
                    if shade > *darkening.get(y, x) {
                        darkening.set(y, x, shade);
                    }
                    if d <= r {
                        mask.set(y, x, true);
                    }
                }
            }
        }
    }
    Layer { darkening, mask }
}

/// Deterministic sample for `seed`.
pub fn synthetic_sample(cfg: &SyntheticConfig, seed: u64, id: impl Into<String>) -> Result<SegmentationSample> {
    cfg.validate()?;
    let (h, w) = (cfg.height, cfg.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let thick = draw_layer(&mut rng, h, w, cfg.thick_vessels, cfg.thick_radius, cfg.thick_contrast);
    let thin = draw_layer(&mut rng, h, w, cfg.thin_vessels, (cfg.thin_radius, cfg.thin_radius), cfg.thin_contrast);
    let (cy, cx) = (h as f64 / 2.0, w as f64 / 2.0);
    let radius = cy.min(cx);
    let fov = cfg.fov.then(|| {
        Grid::from_fn(h, w, |y, x| {
            let (dy, dx) = (y as f64 + 0.5 - cy, x as f64 + 0.5 - cx);
            dy * dy + dx * dx <= radius * radius
        })
    });
    let tilt: f64 = rng.random_range(-0.1..0.1);
    let image = Grid::from_fn(h, w, |y, x| {
        let base = 0.7 + tilt * (x as f64 / w as f64 - 0.5) - 0.1 * (y as f64 / h as f64 - 0.5);
        let dark = thick.darkening.get(y, x).max(*thin.darkening.get(y, x)) as f64;
        let noise = if cfg.noise > 0.0 {
            cfg.noise * (rng.random::<f64>() * 2.0 - 1.0)
        } else {
            0.0
        };
        let inside = fov.as_ref().is_none_or(|f| *f.get(y, x));
        if inside {
            (base - dark + noise).clamp(0.0, 1.0) as f32
        } else {
            0.0
        }
    });
    let mask = Grid::from_fn(h, w, |y, x| {
        (*thick.mask.get(y, x) || *thin.mask.get(y, x)) && fov.as_ref().is_none_or(|f| *f.get(y, x))
    });
    SegmentationSample::new(id, DatasetTag::Custom, image, mask, fov)
}

/// Labels of the faint thin vessels alone, for tests that need them.
pub fn thin_vessel_mask(cfg: &SyntheticConfig, seed: u64) -> Result<Mask> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let thick = draw_layer(&mut rng, cfg.height, cfg.width, cfg.thick_vessels, cfg.thick_radius, cfg.thick_contrast);
    let thin = draw_layer(&mut rng, cfg.height, cfg.width, cfg.thin_vessels, (cfg.thin_radius, cfg.thin_radius), cfg.thin_contrast);
    Ok(Grid::from_fn(cfg.height, cfg.width, |y, x| *thin.mask.get(y, x) && !*thick.mask.get(y, x)))
}

/// Writes `count` samples as 8-bit PGM files under `images/`, `labels/` and,
/// when enabled, `fov/`. With `test_count > 0` the last ones go under a
/// `test/` tree and the rest under `training/`.
pub fn write_fixture_dataset(
    root: impl AsRef<Path>,
    cfg: &SyntheticConfig,
    count: usize,
    test_count: usize,
    seed: u64,
) -> Result<Vec<SegmentationSample>> {
    if test_count > count {
        return Err(invalid!("test count {test_count} exceeds sample count {count}"));
    }
    let root = root.as_ref();
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let id = format!("synth_{i:03}");
        let sample = synthetic_sample(cfg, seed.wrapping_add(i as u64), &id)?;
        let dir = match (test_count, i >= count - test_count) {
            (0, _) => root.to_path_buf(),
            (_, true) => root.join("test"),
            (_, false) => root.join("training"),
        };
        save_image8(&sample.image, dir.join("images").join(format!("{id}.pgm")))?;
        save_mask(&sample.mask, dir.join("labels").join(format!("{id}.pgm")))?;
        if let Some(f) = &sample.fov {
            save_mask(f, dir.join("fov").join(format!("{id}.pgm")))?;
        }
        out.push(sample);
    }
    Ok(out)
}
