//! Dataset ingestion, preprocessing, augmentation, splits and synthetic data.

pub mod augment;
pub mod dataset;
pub mod io;
pub mod preprocess;
pub mod splits;
pub mod synthetic;

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::grid::{Image, Mask};

pub use augment::{augment, AugmentConfig, AugmentOp, AugmentPlan, Rotation};
pub use dataset::{discover, load_dataset, load_entries, sample_key, DatasetEntry};
pub use io::{load_image, load_mask, save_image16, save_image8, save_mask};
pub use preprocess::{clahe, gamma_correct, hist_equalize, resize_bilinear, resize_nearest, rgb_to_gray};
pub use splits::{make_splits, natural_cmp, SplitOptions, SplitPlan, Subset};
pub use synthetic::{synthetic_sample, thin_vessel_mask, write_fixture_dataset, SyntheticConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DatasetTag {
    Drive,
    Chase,
    Stare,
    Dca1,
    Custom,
}

impl DatasetTag {
    pub const ALL: [DatasetTag; 5] = [
        DatasetTag::Drive,
        DatasetTag::Chase,
        DatasetTag::Stare,
        DatasetTag::Dca1,
        DatasetTag::Custom,
    ];

    pub fn label(self) -> &'static str {
        match self {
            DatasetTag::Drive => "drive",
            DatasetTag::Chase => "chase",
            DatasetTag::Stare => "stare",
            DatasetTag::Dca1 => "dca1",
            DatasetTag::Custom => "custom",
        }
    }

    /// Native resolution as (height, width).
    pub fn native_size(self) -> Option<(usize, usize)> {
        match self {
            DatasetTag::Drive => Some((584, 565)),
            DatasetTag::Chase => Some((960, 999)),
            DatasetTag::Stare => Some((605, 700)),
            DatasetTag::Dca1 => Some((300, 300)),
            DatasetTag::Custom => None,
        }
    }

    /// Square size images are resized to for full-resolution training.
    pub fn training_size(self) -> Option<usize> {
        match self {
            DatasetTag::Drive => Some(565),
            DatasetTag::Chase => Some(960),
            DatasetTag::Stare => Some(605),
            DatasetTag::Dca1 => Some(300),
            DatasetTag::Custom => None,
        }
    }
}

impl fmt::Display for DatasetTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for DatasetTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "drive" => Ok(DatasetTag::Drive),
            "chase" | "chasedb1" | "chasedb" => Ok(DatasetTag::Chase),
            "stare" => Ok(DatasetTag::Stare),
            "dca1" => Ok(DatasetTag::Dca1),
            "custom" => Ok(DatasetTag::Custom),
            other => Err(invalid!("unknown dataset tag {other:?}")),
        }
    }
}

/// One image with its vessel annotation and optional field of view.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentationSample {
    pub id: String,
    pub tag: DatasetTag,
    pub image: Image,
    pub mask: Mask,
    pub fov: Option<Mask>,
}

impl SegmentationSample {
    pub fn new(id: impl Into<String>, tag: DatasetTag, image: Image, mask: Mask, fov: Option<Mask>) -> Result<Self> {
        let id = id.into();
        image.ensure_same_dims(&mask, &format!("mask of {id}"))?;
        if let Some(f) = &fov {
            image.ensure_same_dims(f, &format!("fov of {id}"))?;
        }
        if image.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid!("image {id} has intensities outside [0, 1]"));
        }
        Ok(SegmentationSample { id, tag, image, mask, fov })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.image.dims()
    }

    /// Resamples to `height x width`: bilinear for the image, nearest for masks.
    pub fn resized(&self, height: usize, width: usize) -> Result<Self> {
        Ok(SegmentationSample {
            id: self.id.clone(),
            tag: self.tag,
            image: resize_bilinear(&self.image, height, width)?,
            mask: resize_nearest(&self.mask, height, width)?,
            fov: self.fov.as_ref().map(|f| resize_nearest(f, height, width)).transpose()?,
        })
    }

    /// Applies a contrast transform to the image only.
    pub fn map_image(&self, f: impl FnOnce(&Image) -> Result<Image>) -> Result<Self> {
        let image = f(&self.image)?;
        SegmentationSample::new(self.id.clone(), self.tag, image, self.mask.clone(), self.fov.clone())
    }
}
