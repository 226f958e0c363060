//! Training configuration as a plain `key = value` file. Model keys from
//! [`ModelConfig`] may appear in the same file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::optim::AdamConfig;
use crate::data::{clahe, gamma_correct, AugmentConfig, AugmentOp, DatasetTag, Rotation, SplitOptions};
use crate::grid::Image;
use crate::error::{Error, Result};
use crate::kv;
use crate::model::ModelConfig;

/// Where training images come from.
#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Folder(PathBuf),
    /// Procedurally generated vessel images, `count` of `size x size`.
    Synthetic { count: usize, size: usize, seed: u64 },
}

/// Optional contrast preprocessing applied to every image before training
/// and evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocess {
    pub gamma: f64,
    pub clahe: bool,
    pub clahe_clip: f64,
    pub clahe_tiles: usize,
}

impl Default for Preprocess {
    fn default() -> Self {
        Preprocess {
            gamma: 1.0,
            clahe: false,
            clahe_clip: 2.0,
            clahe_tiles: 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub dataset: DatasetTag,
    pub source: DataSource,
    /// Square resize target; `None` keeps native dimensions.
    pub image_size: Option<usize>,
    /// Resize to the dataset's standard training size. Needed for images
    /// larger than [`MAX_DESK_EXTENT`] when `image_size` is unset.
    pub full_resolution: bool,
    pub augment: AugmentConfig,
    pub split: SplitOptions,
    pub preprocess: Preprocess,
    pub model: ModelConfig,
    /// Directory for the checkpoint, loss trace and metrics.
    pub output_dir: Option<PathBuf>,
}

/// Largest native extent trained on without an explicit size decision.
pub const MAX_DESK_EXTENT: usize = 128;

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            batch_size: 2,
            epochs: 100,
            seed: 0,
            dataset: DatasetTag::Custom,
            source: DataSource::Synthetic {
                count: 4,
                size: 48,
                seed: 0,
            },
            image_size: None,
            full_resolution: false,
            augment: AugmentConfig::default(),
            split: SplitOptions::default(),
            preprocess: Preprocess::default(),
            model: ModelConfig::default(),
            output_dir: None,
        }
    }
}

fn join_ops(cfg: &AugmentConfig) -> String {
    if cfg.ops.is_empty() {
        "none".into()
    } else {
        cfg.ops.iter().map(|o| o.label()).collect::<Vec<_>>().join(",")
    }
}

impl Preprocess {
    /// Gamma then CLAHE, each only when configured.
    pub fn apply(&self, image: &Image) -> Result<Image> {
        let mut img = if self.gamma != 1.0 {
            gamma_correct(image, self.gamma)?
        } else {
            image.clone()
        };
        if self.clahe {
            let (ty, tx) = (self.clahe_tiles.min(img.height()), self.clahe_tiles.min(img.width()));
            img = clahe(&img, self.clahe_clip, ty, tx)?;
        }
        Ok(img)
    }
}

impl TrainConfig {
    /// Square size images are resized to, if any.
    pub fn effective_image_size(&self) -> Option<usize> {
        match (self.image_size, self.full_resolution) {
            (Some(n), _) => Some(n),
            (None, true) => self.dataset.training_size(),
            (None, false) => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        self.adam.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if let DataSource::Synthetic { count, size, .. } = self.source {
            if count == 0 || size < 4 {
                return bad("synthetic data needs at least one sample of size >= 4");
            }
        }
        if self.image_size == Some(0) {
            return bad("image_size must be positive");
        }
        if !(0.0..1.0).contains(&self.split.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        if !(self.preprocess.gamma > 0.0) || self.preprocess.clahe_clip < 1.0 || self.preprocess.clahe_tiles == 0 {
            return bad("preprocessing needs gamma > 0, clahe_clip >= 1 and clahe_tiles >= 1");
        }
        self.augment.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.model.validate()
    }

    pub fn to_entries(&self) -> Vec<(&'static str, String)> {
        let mut e = vec![
            ("learning_rate", self.adam.learning_rate.to_string()),
            ("beta1", self.adam.beta1.to_string()),
            ("beta2", self.adam.beta2.to_string()),
            ("adam_eps", self.adam.eps.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("epochs", self.epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("dataset", self.dataset.to_string()),
        ];
        match &self.source {
            DataSource::Folder(p) => e.push(("dataset_root", p.display().to_string())),
            DataSource::Synthetic { count, size, seed } => {
                e.push(("synthetic_count", count.to_string()));
                e.push(("synthetic_size", size.to_string()));
                e.push(("synthetic_seed", seed.to_string()));
            }
        }
        if let Some(s) = self.image_size {
            e.push(("image_size", s.to_string()));
        }
        e.push(("full_resolution", self.full_resolution.to_string()));
        e.push(("augment", join_ops(&self.augment)));
        e.push(("augment_probability", self.augment.probability.to_string()));
        match self.augment.rotation {
            Rotation::Quarter => e.push(("rotation", "quarter".into())),
            Rotation::Continuous { max_degrees } => {
                e.push(("rotation", "continuous".into()));
                e.push(("rotation_max_degrees", max_degrees.to_string()));
            }
        }
        e.push(("distortion_max", self.augment.max_distortion.to_string()));
        e.push(("gamma_min", self.augment.gamma_range.0.to_string()));
        e.push(("gamma_max", self.augment.gamma_range.1.to_string()));
        e.push(("validation_fraction", self.split.validation_fraction.to_string()));
        e.push(("fold", self.split.fold.to_string()));
        if let Some(k) = self.split.folds {
            e.push(("folds", k.to_string()));
        }
        e.push(("split_seed", self.split.seed.to_string()));
        e.push(("train_fraction", self.split.custom_train_fraction.to_string()));
        e.push(("preprocess_gamma", self.preprocess.gamma.to_string()));
        e.push(("clahe", self.preprocess.clahe.to_string()));
        e.push(("clahe_clip", self.preprocess.clahe_clip.to_string()));
        e.push(("clahe_tiles", self.preprocess.clahe_tiles.to_string()));
        if let Some(d) = &self.output_dir {
            e.push(("output_dir", d.display().to_string()));
        }
        e.extend(self.model.to_entries());
        e
    }

    pub fn to_text(&self) -> String {
        kv::render(self.to_entries())
    }

    /// Defaults plus `entries`; unknown keys are errors. Relative paths
    /// resolve against `base`.
    pub fn from_entries(entries: &BTreeMap<String, String>, base: Option<&Path>) -> Result<Self> {
        let mut c = TrainConfig::default();
        let resolve = |raw: &str| -> PathBuf {
            let p = PathBuf::from(raw);
            match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };
        let (mut syn_count, mut syn_size, mut syn_seed): (Option<usize>, Option<usize>, Option<u64>) = (None, None, None);
        let mut root = None;
        let mut rotation_kind = None;
        let mut max_degrees = None;
        for (k, raw) in entries {
            let raw = raw.as_str();
            match k.as_str() {
                "learning_rate" => c.adam.learning_rate = kv::value(k, raw)?,
                "beta1" => c.adam.beta1 = kv::value(k, raw)?,
                "beta2" => c.adam.beta2 = kv::value(k, raw)?,
                "adam_eps" => c.adam.eps = kv::value(k, raw)?,
                "batch_size" => c.batch_size = kv::value(k, raw)?,
                "epochs" => c.epochs = kv::value(k, raw)?,
                "seed" => c.seed = kv::value(k, raw)?,
                "dataset" => c.dataset = raw.parse().map_err(|e| Error::Config(format!("{e}")))?,
                "dataset_root" => root = Some(resolve(raw)),
                "synthetic_count" => syn_count = Some(kv::value(k, raw)?),
                "synthetic_size" => syn_size = Some(kv::value(k, raw)?),
                "synthetic_seed" => syn_seed = Some(kv::value(k, raw)?),
                "image_size" => c.image_size = Some(kv::value(k, raw)?),
                "full_resolution" => c.full_resolution = kv::flag(k, raw)?,
                "augment" => {
                    c.augment.ops = raw
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty() && *s != "none")
                        .map(|s| {
                            if s == "all" {
                                Ok(AugmentOp::ALL.to_vec())
                            } else {
                                s.parse::<AugmentOp>().map(|o| vec![o])
                            }
                        })
                        .collect::<Result<Vec<_>>>()
                        .map_err(|e| Error::Config(format!("{e}")))?
                        .into_iter()
                        .flatten()
                        .collect()
                }
                "augment_probability" => c.augment.probability = kv::value(k, raw)?,
                "rotation" => rotation_kind = Some(raw.to_ascii_lowercase()),
                "rotation_max_degrees" => max_degrees = Some(kv::value(k, raw)?),
                "distortion_max" => c.augment.max_distortion = kv::value(k, raw)?,
                "gamma_min" => c.augment.gamma_range.0 = kv::value(k, raw)?,
                "gamma_max" => c.augment.gamma_range.1 = kv::value(k, raw)?,
                "validation_fraction" => c.split.validation_fraction = kv::value(k, raw)?,
                "fold" => c.split.fold = kv::value(k, raw)?,
                "folds" => c.split.folds = Some(kv::value(k, raw)?),
                "split_seed" => c.split.seed = kv::value(k, raw)?,
                "train_fraction" => c.split.custom_train_fraction = kv::value(k, raw)?,
                "preprocess_gamma" => c.preprocess.gamma = kv::value(k, raw)?,
                "clahe" => c.preprocess.clahe = kv::flag(k, raw)?,
                "clahe_clip" => c.preprocess.clahe_clip = kv::value(k, raw)?,
                "clahe_tiles" => c.preprocess.clahe_tiles = kv::value(k, raw)?,
                "output_dir" => c.output_dir = Some(resolve(raw)),
                other => {
                    if !c.model.apply(other, raw)? {
                        return Err(Error::Config(format!("unknown config key {other:?}")));
                    }
                }
            }
        }
        c.augment.rotation = match (rotation_kind.as_deref(), max_degrees) {
            (Some("quarter"), _) => Rotation::Quarter,
            (Some("continuous") | None, Some(d)) => Rotation::Continuous { max_degrees: d },
            (Some("continuous") | None, None) => c.augment.rotation,
            (Some(other), _) => return Err(Error::Config(format!("rotation must be quarter or continuous, got {other:?}"))),
        };
        c.source = match (root, syn_count.is_some() || syn_size.is_some() || syn_seed.is_some()) {
            (Some(_), true) => {
                return Err(Error::Config("dataset_root and synthetic_* keys are mutually exclusive".into()))
            }
            (Some(r), false) => DataSource::Folder(r),
            (None, _) => DataSource::Synthetic {
                count: syn_count.unwrap_or(4),
                size: syn_size.unwrap_or(48),
                seed: syn_seed.unwrap_or(0),
            },
        };
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_entries(&kv::parse(text)?, None)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_entries(&kv::parse(&text)?, path.parent())
    }
}
