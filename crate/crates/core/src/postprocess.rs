//! Sigmoid smoothing and the ratio-driven adaptive threshold search.
//!
//! The search walks thresholds `theta_k = theta_initial + k * delta_theta`
//! upward. At each step pixels with `P >= theta` are foreground, and the
//! background-to-foreground ratio is compared with a target ratio estimated
//! from training masks. Because the foreground count can only shrink as
//! theta grows, the ratio is non-decreasing and the deviation from the target
//! first falls then rises.

use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, Mask};
use crate::tensor::{sigmoid_scalar, Real, Tensor};

/// Per-pixel vessel probability in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    values: Grid<f32>,
}

impl ProbabilityMap {
    pub fn new(values: Grid<f32>) -> Result<Self> {
        if let Some(v) = values.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid!("probability {v} outside [0, 1]"));
        }
        Ok(ProbabilityMap { values })
    }

    pub fn grid(&self) -> &Grid<f32> {
        &self.values
    }

    pub fn values(&self) -> &[f32] {
        self.values.data()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.values.dims()
    }

    pub fn into_grid(self) -> Grid<f32> {
        self.values
    }
}

/// Elementwise sigmoid of a single-plane logit tensor.
pub fn smooth(logits: &Tensor<f32>) -> Result<ProbabilityMap> {
    let g = Grid::from_tensor(logits)?;
    if g.data().iter().any(|v| !v.is_finite()) {
        return Err(invalid!("logits must be finite"));
    }
    ProbabilityMap::new(g.map(|&z| sigmoid_scalar(z)))
}

/// Sigmoid when `smoothing` is set, otherwise a clamp to [0, 1].
pub fn to_probabilities<T: Real>(logits: &Tensor<T>, smoothing: bool) -> Tensor<T> {
    let data = logits
        .data()
        .iter()
        .map(|&z| {
            if smoothing {
                sigmoid_scalar(z)
            } else {
                z.max(T::zero()).min(T::one())
            }
        })
        .collect();
    Tensor::new(logits.shape().to_vec(), data).expect("same shape")
}

/// Pooled background / foreground over masks, each optionally restricted to
/// its field of view.
pub fn estimate_optimum_ratio<'a>(
    masks: impl IntoIterator<Item = (&'a Mask, Option<&'a Mask>)>,
) -> Result<f64> {
    let (mut fg, mut bg) = (0u64, 0u64);
    for (mask, fov) in masks {
        if let Some(f) = fov {
            mask.ensure_same_dims(f, "mask vs field of view")?;
        }
        for (i, &m) in mask.data().iter().enumerate() {
            if fov.is_some_and(|f| !f.data()[i]) {
                continue;
            }
            if m {
                fg += 1;
            } else {
                bg += 1;
            }
        }
    }
    if fg == 0 {
        return Err(invalid!("no foreground pixels to estimate the ratio from"));
    }
    Ok(bg as f64 / fg as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ThresholdSearchConfig {
    pub theta_initial: f64,
    pub delta_theta: f64,
    pub epsilon: f64,
    pub optimum: f64,
    pub theta_max: f64,
    /// After the tolerance is met, keep stepping while the deviation does not
    /// grow and return the first theta with the smallest deviation.
    pub refine: bool,
}

impl ThresholdSearchConfig {
    /// Defaults: start 0.05, step 0.005, tolerance 5% of the target, cap 0.99.
    pub fn for_optimum(optimum: f64) -> Self {
        ThresholdSearchConfig {
            theta_initial: 0.05,
            delta_theta: 0.005,
            epsilon: 0.05 * optimum,
            optimum,
            theta_max: 0.99,
            refine: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.theta_initial >= 0.0
            && self.theta_initial < self.theta_max
            && self.theta_max <= 1.0
            && self.delta_theta > 0.0
            && self.epsilon > 0.0
            && self.optimum > 0.0
            && [self.theta_initial, self.delta_theta, self.epsilon, self.optimum, self.theta_max]
                .iter()
                .all(|v| v.is_finite());
        if !ok {
            return Err(invalid!("threshold search config out of range: {self:?}"));
        }
        Ok(())
    }

    /// Number of grid points in `[theta_initial, theta_max]`.
    pub fn grid_len(&self) -> usize {
        ((self.theta_max - self.theta_initial) / self.delta_theta + 1e-9).floor() as usize + 1
    }

    pub fn theta(&self, k: usize) -> f64 {
        self.theta_initial + k as f64 * self.delta_theta
    }

    /// The full scan grid.
    pub fn grid(&self) -> Vec<f64> {
        (0..self.grid_len()).map(|k| self.theta(k)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdOutcome {
    pub theta: f64,
    /// Background / foreground at `theta`; infinite when nothing is foreground.
    pub ratio: f64,
    pub deviation: f64,
    /// Thresholds evaluated.
    pub iterations: usize,
    /// Whether the deviation came within epsilon.
    pub within_tolerance: bool,
    pub mask: Mask,
}

/// Sorted probabilities of the counted pixels, for O(log n) foreground counts.
struct Counter {
    sorted: Vec<f64>,
}

impl Counter {
    fn new(p: &ProbabilityMap, fov: Option<&Mask>) -> Self {
        let mut sorted: Vec<f64> = p
            .values()
            .iter()
            .enumerate()
            .filter(|(i, _)| fov.is_none_or(|f| f.data()[*i]))
            .map(|(_, &v)| v as f64)
            .collect();
        sorted.sort_by(f64::total_cmp);
        Counter { sorted }
    }

    fn ratio(&self, theta: f64) -> f64 {
        let fg = self.sorted.len() - self.sorted.partition_point(|&v| v < theta);
        if fg == 0 {
            f64::INFINITY
        } else {
            (self.sorted.len() - fg) as f64 / fg as f64
        }
    }
}

fn deviation(optimum: f64, ratio: f64) -> f64 {
    if ratio.is_finite() {
        (optimum - ratio).abs()
    } else {
        f64::INFINITY
    }
}

/// Adaptive threshold over the whole map.
pub fn adaptive_threshold(p: &ProbabilityMap, cfg: &ThresholdSearchConfig) -> Result<ThresholdOutcome> {
    adaptive_threshold_in(p, cfg, None)
}

/// Adaptive threshold with the ratio counted inside `fov` only. The returned
/// mask still covers every pixel.
pub fn adaptive_threshold_in(
    p: &ProbabilityMap,
    cfg: &ThresholdSearchConfig,
    fov: Option<&Mask>,
) -> Result<ThresholdOutcome> {
    cfg.validate()?;
    if let Some(f) = fov {
        p.grid().ensure_same_dims(f, "probabilities vs field of view")?;
    }
    let counter = Counter::new(p, fov);
    let n = cfg.grid_len();
    let mut best = (0usize, f64::INFINITY, f64::INFINITY);
    let mut iterations = 0;
    let mut within = false;
    for k in 0..n {
        let theta = cfg.theta(k);
        let ratio = counter.ratio(theta);
        let dev = deviation(cfg.optimum, ratio);
        iterations += 1;
        if within && dev > best.2 {
            break;
        }
        if dev < best.2 {
            best = (k, ratio, dev);
        }
        if dev <= cfg.epsilon {
            within = true;
            if !cfg.refine {
                break;
            }
        }
    }
    let theta = cfg.theta(best.0);
    Ok(ThresholdOutcome {
        theta,
        ratio: if best.2.is_finite() { best.1 } else { counter.ratio(theta) },
        deviation: best.2,
        iterations,
        within_tolerance: within,
        mask: threshold_mask(p, theta),
    })
}

fn threshold_mask(p: &ProbabilityMap, theta: f64) -> Mask {
    p.grid().map(|&v| v as f64 >= theta)
}

/// `P >= theta` for theta in [0, 1].
pub fn fixed_threshold(p: &ProbabilityMap, theta: f64) -> Result<Mask> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(invalid!("threshold {theta} outside [0, 1]"));
    }
    Ok(threshold_mask(p, theta))
}

/// Count of pixels where `1{P >= theta}` disagrees with the truth.
pub fn disagreement(p: &ProbabilityMap, truth: &Mask, theta: f64) -> Result<usize> {
    p.grid().ensure_same_dims(truth, "probabilities vs truth")?;
    Ok(p
        .values()
        .iter()
        .zip(truth.data())
        .filter(|(&v, &t)| (v as f64 >= theta) != t)
        .count())
}

/// Label-aware reference: the smallest grid theta minimizing [`disagreement`].
pub fn eq2_oracle(p: &ProbabilityMap, truth: &Mask, grid: &[f64]) -> Result<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for &theta in grid {
        let d = disagreement(p, truth, theta)?;
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((theta, d));
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("empty threshold grid".into()))
}
