//! Inference over samples and metric collection.

use std::collections::BTreeMap;

use super::config::{Preprocess, TrainConfig};
use crate::data::{resize_bilinear, SegmentationSample};
use crate::error::{invalid, Result};
use crate::kv;
use crate::grid::{Grid, Image, Mask};
use crate::metrics::Evaluation;
use crate::model::FsNet;
use crate::postprocess::{
    adaptive_threshold_in, estimate_optimum_ratio, fixed_threshold, to_probabilities, ProbabilityMap,
    ThresholdSearchConfig,
};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    /// Adaptive threshold search instead of the fixed threshold.
    pub adaptive: bool,
    pub fixed_threshold: f64,
    /// Target background/foreground ratio; required when `adaptive`.
    pub optimum: Option<f64>,
    /// Overrides the default search grid for `optimum`.
    pub search: Option<ThresholdSearchConfig>,
    /// Restrict counting to the field of view when a sample has one.
    pub use_fov: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            adaptive: false,
            fixed_threshold: 0.5,
            optimum: None,
            search: None,
            use_fov: true,
        }
    }
}

impl EvalOptions {
    pub fn fixed(theta: f64) -> Self {
        EvalOptions {
            fixed_threshold: theta,
            ..Default::default()
        }
    }

    pub fn adaptive(optimum: f64) -> Self {
        EvalOptions {
            adaptive: true,
            optimum: Some(optimum),
            ..Default::default()
        }
    }

    fn search(&self) -> Result<ThresholdSearchConfig> {
        match (self.search, self.optimum) {
            (Some(s), _) => Ok(s),
            (None, Some(o)) => Ok(ThresholdSearchConfig::for_optimum(o)),
            (None, None) => Err(invalid!("adaptive thresholding needs a target ratio")),
        }
    }
}

/// Probability map of a single grayscale image in eval mode.
pub fn predict_map(model: &FsNet<f32>, image: &Image) -> Result<ProbabilityMap> {
    let logits = model.predict_logits(&image.to_tensor())?;
    let probs = to_probabilities(&logits, model.config.enable_smoothing);
    ProbabilityMap::new(Grid::from_tensor(&probs)?)
}

/// Binarizes one map with the configured rule; returns the mask and threshold.
pub fn binarize_map(p: &ProbabilityMap, fov: Option<&Mask>, opts: &EvalOptions) -> Result<(Mask, f64)> {
    if opts.adaptive {
        let out = adaptive_threshold_in(p, &opts.search()?, fov)?;
        Ok((out.mask, out.theta))
    } else {
        Ok((fixed_threshold(p, opts.fixed_threshold)?, opts.fixed_threshold))
    }
}

/// Background/foreground ratio of the samples' annotations inside their fields of view.
pub fn optimum_from_samples(samples: &[SegmentationSample]) -> Result<f64> {
    estimate_optimum_ratio(samples.iter().map(|s| (&s.mask, s.fov.as_ref())))
}

/// Evaluates `model` on every sample in order.
pub fn evaluate_samples(model: &FsNet<f32>, samples: &[SegmentationSample], opts: &EvalOptions) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(invalid!("no samples to evaluate"));
    }
    let mut eval = Evaluation::new();
    for s in samples {
        let p = predict_map(model, &s.image)?;
        let fov = if opts.use_fov { s.fov.as_ref() } else { None };
        let (pred, theta) = binarize_map(&p, fov, opts)?;
        eval.add(s.id.clone(), &p, &pred, &s.mask, fov, theta)?;
    }
    Ok(eval)
}

/// Preprocessing and ratio target recorded with a checkpoint, so inference
/// sees images the way training did.
#[derive(Clone, Debug, PartialEq)]
pub struct InferenceSettings {
    pub preprocess: Preprocess,
    /// Square size the network ran at; maps are resized back afterwards.
    pub image_size: Option<usize>,
    pub optimum: Option<f64>,
}

impl InferenceSettings {
    pub fn from_train_config(cfg: &TrainConfig) -> Self {
        InferenceSettings {
            preprocess: cfg.preprocess.clone(),
            image_size: cfg.effective_image_size(),
            optimum: None,
        }
    }

    pub fn to_metadata(&self, out: &mut BTreeMap<String, String>) {
        let p = &self.preprocess;
        out.insert("preprocess_gamma".into(), p.gamma.to_string());
        out.insert("clahe".into(), p.clahe.to_string());
        out.insert("clahe_clip".into(), p.clahe_clip.to_string());
        out.insert("clahe_tiles".into(), p.clahe_tiles.to_string());
        if let Some(s) = self.image_size {
            out.insert("image_size".into(), s.to_string());
        }
        if let Some(o) = self.optimum {
            out.insert("optimum".into(), o.to_string());
        }
    }

    /// Missing keys fall back to defaults.
    pub fn from_metadata(meta: &BTreeMap<String, String>) -> Result<Self> {
        let mut s = InferenceSettings {
            preprocess: Preprocess::default(),
            image_size: None,
            optimum: None,
        };
        for (k, raw) in meta {
            match k.as_str() {
                "preprocess_gamma" => s.preprocess.gamma = kv::value(k, raw)?,
                "clahe" => s.preprocess.clahe = kv::flag(k, raw)?,
                "clahe_clip" => s.preprocess.clahe_clip = kv::value(k, raw)?,
                "clahe_tiles" => s.preprocess.clahe_tiles = kv::value(k, raw)?,
                "image_size" => s.image_size = Some(kv::value(k, raw)?),
                "optimum" => s.optimum = Some(kv::value(k, raw)?),
                _ => {}
            }
        }
        Ok(s)
    }

    /// Gamma and CLAHE as configured, then the resize.
    pub fn prepare(&self, image: &Image) -> Result<Image> {
        let mut img = self.preprocess.apply(image)?;
        if let Some(n) = self.image_size {
            img = resize_bilinear(&img, n, n)?;
        }
        Ok(img)
    }

    /// Probability map at the input's own resolution.
    pub fn predict(&self, model: &FsNet<f32>, image: &Image) -> Result<ProbabilityMap> {
        let p = predict_map(model, &self.prepare(image)?)?;
        if p.dims() == image.dims() {
            return Ok(p);
        }
        let back = resize_bilinear(p.grid(), image.height(), image.width())?;
        ProbabilityMap::new(back.map(|v| v.clamp(0.0, 1.0)))
    }
}
