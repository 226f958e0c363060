//! Seeded augmentation. Geometric ops compose into one inverse coordinate
//! map applied to image, mask and fov together; photometric ops touch only
//! the image.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::preprocess::{gamma_correct, hist_equalize};
use super::SegmentationSample;
use crate::error::{invalid, Error, Result};
use crate::grid::Grid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AugmentOp {
    Rotation,
    Flip,
    OpticalDistortion,
    Gamma,
    HistEq,
}

impl AugmentOp {
    pub const ALL: [AugmentOp; 5] = [
        AugmentOp::Rotation,
        AugmentOp::Flip,
        AugmentOp::OpticalDistortion,
        AugmentOp::Gamma,
        AugmentOp::HistEq,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AugmentOp::Rotation => "rotation",
            AugmentOp::Flip => "flip",
            AugmentOp::OpticalDistortion => "distortion",
            AugmentOp::Gamma => "gamma",
            AugmentOp::HistEq => "hist_eq",
        }
    }
}

impl fmt::Display for AugmentOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for AugmentOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rotation" | "rotate" => Ok(AugmentOp::Rotation),
            "flip" => Ok(AugmentOp::Flip),
            "distortion" | "optical_distortion" => Ok(AugmentOp::OpticalDistortion),
            "gamma" => Ok(AugmentOp::Gamma),
            "hist_eq" | "histeq" | "equalize" => Ok(AugmentOp::HistEq),
            other => Err(invalid!("unknown augmentation {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Rotation {
    /// Multiples of 90 degrees; non-square images only get 0 or 180.
    Quarter,
    /// Uniform angle in `[-max_degrees, max_degrees]`.
    Continuous { max_degrees: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub ops: BTreeSet<AugmentOp>,
    /// Chance that each enabled op fires.
    pub probability: f64,
    pub rotation: Rotation,
    /// Radial coefficient bound for the barrel/pincushion warp.
    pub max_distortion: f64,
    pub gamma_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            ops: BTreeSet::new(),
            probability: 0.5,
            rotation: Rotation::Continuous { max_degrees: 30.0 },
            max_distortion: 0.15,
            gamma_range: (0.7, 1.5),
        }
    }
}

impl AugmentConfig {
    pub fn all() -> Self {
        AugmentConfig {
            ops: AugmentOp::ALL.into_iter().collect(),
            ..Default::default()
        }
    }

    pub fn is_enabled(&self) -> bool {
        !self.ops.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.probability) {
            return Err(invalid!("augmentation probability must lie in [0, 1]"));
        }
        if let Rotation::Continuous { max_degrees } = self.rotation {
            if !(max_degrees >= 0.0 && max_degrees <= 180.0) {
                return Err(invalid!("rotation bound must lie in [0, 180] degrees"));
            }
        }
        if !(0.0..0.5).contains(&self.max_distortion) {
            return Err(invalid!("distortion bound must lie in [0, 0.5)"));
        }
        let (lo, hi) = self.gamma_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(invalid!("gamma range must satisfy 0 < lo <= hi"));
        }
        Ok(())
    }
}

/// Concrete draw of every augmentation parameter for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentPlan {
    pub flip_horizontal: bool,
    pub flip_vertical: bool,
    /// Quarter turns counter-clockwise, used instead of `angle` when set.
    pub quarter_turns: u8,
    /// Radians, counter-clockwise.
    pub angle: f64,
    pub distortion: f64,
    pub gamma: Option<f64>,
    pub hist_eq: bool,
}

impl AugmentPlan {
    pub const IDENTITY: AugmentPlan = AugmentPlan {
        flip_horizontal: false,
        flip_vertical: false,
        quarter_turns: 0,
        angle: 0.0,
        distortion: 0.0,
        gamma: None,
        hist_eq: false,
    };

    pub fn sample(cfg: &AugmentConfig, height: usize, width: usize, seed: u64) -> AugmentPlan {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut plan = AugmentPlan::IDENTITY;
        // every op draws the same amount of randomness whether or not it is
        // enabled, so toggling one op does not reshuffle the others
        let fire = |rng: &mut ChaCha8Rng, op: AugmentOp| {
            let u: f64 = rng.random();
            cfg.ops.contains(&op) && u < cfg.probability
        };
        let flip = fire(&mut rng, AugmentOp::Flip);
        let (fh, fv): (bool, bool) = (rng.random(), rng.random());
        if flip {
            plan.flip_horizontal = fh;
            plan.flip_vertical = fv || !fh;
        }
        let rotate = fire(&mut rng, AugmentOp::Rotation);
        let (turn, unit): (u8, f64) = (rng.random_range(1..4), rng.random_range(-1.0..=1.0));
        if rotate {
            match cfg.rotation {
                Rotation::Quarter if height == width => plan.quarter_turns = turn,
                Rotation::Quarter => plan.quarter_turns = 2,
                Rotation::Continuous { max_degrees } => plan.angle = (unit * max_degrees).to_radians(),
            }
        }
        let distort = fire(&mut rng, AugmentOp::OpticalDistortion);
        let k: f64 = rng.random_range(-1.0..=1.0);
        if distort {
            plan.distortion = k * cfg.max_distortion;
        }
        let gamma = fire(&mut rng, AugmentOp::Gamma);
        let t: f64 = rng.random();
        if gamma {
            let (lo, hi) = cfg.gamma_range;
            plan.gamma = Some(lo + t * (hi - lo));
        }
        plan.hist_eq = fire(&mut rng, AugmentOp::HistEq);
        plan
    }

    pub fn is_geometric_identity(&self) -> bool {
        !self.flip_horizontal && !self.flip_vertical && self.quarter_turns % 4 == 0 && self.angle == 0.0 && self.distortion == 0.0
    }

    pub fn output_dims(&self, height: usize, width: usize) -> (usize, usize) {
        if self.quarter_turns % 2 == 1 {
            (width, height)
        } else {
            (height, width)
        }
    }

    /// Source coordinate `(y, x)` sampled by output pixel `(oy, ox)`.
    ///
    /// Working outward from the output: undo the radial warp, then the
    /// rotation, then the flips.
    pub fn source_coord(&self, oy: usize, ox: usize, height: usize, width: usize) -> (f64, f64) {
        let (oh, ow) = self.output_dims(height, width);
        let (ocy, ocx) = ((oh as f64 - 1.0) / 2.0, (ow as f64 - 1.0) / 2.0);
        let (mut v, mut u) = (oy as f64 - ocy, ox as f64 - ocx);
        if self.distortion != 0.0 {
            let norm = (ocy * ocy + ocx * ocx).max(1.0);
            let s = 1.0 + self.distortion * (u * u + v * v) / norm;
            u *= s;
            v *= s;
        }
        let (sin, cos) = match self.quarter_turns % 4 {
            0 if self.angle != 0.0 => self.angle.sin_cos(),
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        };
        // the image turns by +angle, so each output point looks back by -angle
        let su = cos * u - sin * v;
        let sv = sin * u + cos * v;
        let (cy, cx) = ((height as f64 - 1.0) / 2.0, (width as f64 - 1.0) / 2.0);
        let (mut y, mut x) = (sv + cy, su + cx);
        if self.flip_horizontal {
            x = width as f64 - 1.0 - x;
        }
        if self.flip_vertical {
            y = height as f64 - 1.0 - y;
        }
        (y, x)
    }

    fn warp_nearest(&self, m: &Grid<bool>) -> Grid<bool> {
        let (h, w) = m.dims();
        let (oh, ow) = self.output_dims(h, w);
        Grid::from_fn(oh, ow, |oy, ox| {
            let (y, x) = self.source_coord(oy, ox, h, w);
            let (ry, rx) = (y.round(), x.round());
            ry >= 0.0 && rx >= 0.0 && (ry as usize) < h && (rx as usize) < w && *m.get(ry as usize, rx as usize)
        })
    }

    /// Bilinear warp; pixels mapping outside the source read as 0.
    fn warp_bilinear(&self, img: &Grid<f32>) -> Grid<f32> {
        let (h, w) = img.dims();
        let (oh, ow) = self.output_dims(h, w);
        let at = |y: isize, x: isize| -> f32 {
            if y < 0 || x < 0 || y as usize >= h || x as usize >= w {
                0.0
            } else {
                *img.get(y as usize, x as usize)
            }
        };
        Grid::from_fn(oh, ow, |oy, ox| {
            let (y, x) = self.source_coord(oy, ox, h, w);
            if y <= -1.0 || x <= -1.0 || y >= h as f64 || x >= w as f64 {
                return 0.0;
            }
            let (y0, x0) = (y.floor(), x.floor());
            let (fy, fx) = ((y - y0) as f32, (x - x0) as f32);
            let (y0, x0) = (y0 as isize, x0 as isize);
            if fy == 0.0 && fx == 0.0 {
                return at(y0, x0);
            }
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x0 + 1) * fx;
            let bot = at(y0 + 1, x0) * (1.0 - fx) + at(y0 + 1, x0 + 1) * fx;
            top * (1.0 - fy) + bot * fy
        })
    }

    pub fn apply(&self, sample: &SegmentationSample) -> Result<SegmentationSample> {
        let (mut image, mut mask, mut fov) = (sample.image.clone(), sample.mask.clone(), sample.fov.clone());
        if !self.is_geometric_identity() {
            image = self.warp_bilinear(&image);
            mask = self.warp_nearest(&mask);
            fov = fov.as_ref().map(|f| self.warp_nearest(f));
        }
        if let Some(g) = self.gamma {
            image = gamma_correct(&image, g)?;
        }
        if self.hist_eq {
            image = hist_equalize(&image);
        }
        image = image.map(|v| v.clamp(0.0, 1.0));
        SegmentationSample::new(sample.id.clone(), sample.tag, image, mask, fov)
    }
}

/// Draws a plan from `seed` and applies it.
pub fn augment(sample: &SegmentationSample, cfg: &AugmentConfig, seed: u64) -> Result<SegmentationSample> {
    cfg.validate()?;
    let (h, w) = sample.dims();
    AugmentPlan::sample(cfg, h, w, seed).apply(sample)
}
