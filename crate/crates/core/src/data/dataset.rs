//! Dataset folder discovery and loading.
//!
//! A dataset root holds `images/`, a vessel annotation folder and an optional
//! field-of-view folder, either directly or inside `training/` and `test/`.
//! Annotation folders are tried in order `1st_manual`, `manual`, `labels`,
//! `masks`, `2nd_manual`, so the first observer wins when both exist. FOV
//! folders are `fov` or `mask`. Files pair up by stem after stripping the
//! usual suffixes (`_training`, `_manual1`, `_mask`, `_1stHO`, `.ah`, ...).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::io::{load_image, load_mask};
use super::splits::{natural_cmp, Subset};
use super::{DatasetTag, SegmentationSample};
use crate::error::{Error, Result};

const IMAGE_DIRS: &[&str] = &["images", "image", "img"];
const LABEL_DIRS: &[&str] = &["1st_manual", "manual1", "manual", "labels", "label", "masks", "gt", "2nd_manual"];
const FOV_DIRS: &[&str] = &["fov", "mask"];
const TRAIN_DIRS: &[&str] = &["training", "train"];
const TEST_DIRS: &[&str] = &["test", "testing"];
const EXTENSIONS: &[&str] = &["png", "pgm", "ppm", "pnm", "pbm", "tif", "tiff", "gif", "jpg", "jpeg"];
const SUFFIXES: &[&str] = &[
    "_training", "_test", "_manual1", "_manual2", "_manual", "_mask", "_fov", "_1stho", "_2ndho", "_gt", "_label",
    ".ah", ".vk",
];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetEntry {
    pub id: String,
    pub image: PathBuf,
    pub mask: PathBuf,
    pub fov: Option<PathBuf>,
    pub hint: Option<Subset>,
}

/// Sample id from a file stem: suffixes are stripped until none applies.
pub fn sample_key(stem: &str) -> String {
    let mut key = stem.to_string();
    'outer: loop {
        let lower = key.to_ascii_lowercase();
        for s in SUFFIXES {
            if lower.len() > s.len() && lower.ends_with(s) {
                key.truncate(key.len() - s.len());
                continue 'outer;
            }
        }
        return key;
    }
}

fn dataset_err(msg: String) -> Error {
    Error::Dataset(msg)
}

fn find_dir(root: &Path, names: &[&str]) -> Option<PathBuf> {
    names.iter().map(|n| root.join(n)).find(|p| p.is_dir())
}

/// Image files in `dir` keyed by sample id.
fn list_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if !path.is_file() || !ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            continue;
        }
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
        let key = sample_key(stem);
        if let Some(prev) = out.insert(key.clone(), path.clone()) {
            return Err(dataset_err(format!(
                "{} and {} both map to sample id {key}",
                prev.display(),
                path.display()
            )));
        }
    }
    Ok(out)
}

fn scan(dir: &Path, hint: Option<Subset>) -> Result<Vec<DatasetEntry>> {
    let images = find_dir(dir, IMAGE_DIRS)
        .ok_or_else(|| dataset_err(format!("no images/ folder under {}", dir.display())))?;
    let labels = find_dir(dir, LABEL_DIRS)
        .ok_or_else(|| dataset_err(format!("no annotation folder under {}", dir.display())))?;
    let masks = list_files(&labels)?;
    let fovs = find_dir(dir, FOV_DIRS).map(|d| list_files(&d)).transpose()?.unwrap_or_default();
    let mut out = Vec::new();
    for (id, image) in list_files(&images)? {
        let mask = masks
            .get(&id)
            .ok_or_else(|| dataset_err(format!("no annotation for {} in {}", image.display(), labels.display())))?;
        out.push(DatasetEntry {
            fov: fovs.get(&id).cloned(),
            mask: mask.clone(),
            image,
            id,
            hint,
        });
    }
    Ok(out)
}

/// Lists the samples under `root`, sorted by id.
pub fn discover(root: impl AsRef<Path>) -> Result<Vec<DatasetEntry>> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(dataset_err(format!("dataset root {} is not a directory", root.display())));
    }
    let train = find_dir(root, TRAIN_DIRS);
    let test = find_dir(root, TEST_DIRS);
    let mut entries = if train.is_some() || test.is_some() {
        let mut v = Vec::new();
        if let Some(d) = train {
            v.extend(scan(&d, Some(Subset::Train))?);
        }
        if let Some(d) = test {
            v.extend(scan(&d, Some(Subset::Test))?);
        }
        v
    } else {
        scan(root, None)?
    };
    entries.sort_by(|a, b| natural_cmp(&a.id, &b.id));
    if let Some(w) = entries.windows(2).find(|w| w[0].id == w[1].id) {
        return Err(dataset_err(format!("sample id {} appears in both training and test", w[0].id)));
    }
    if entries.is_empty() {
        return Err(dataset_err(format!("no images found under {}", root.display())));
    }
    Ok(entries)
}

pub fn load_entry(entry: &DatasetEntry, tag: DatasetTag) -> Result<SegmentationSample> {
    let image = load_image(&entry.image)?;
    let mask = load_mask(&entry.mask)?;
    let fov = entry.fov.as_ref().map(load_mask).transpose()?;
    if let Some((h, w)) = tag.native_size() {
        if image.dims() != (h, w) {
            log::warn!(
                "{} is {}x{}, expected {h}x{w} for {tag}",
                entry.image.display(),
                image.height(),
                image.width()
            );
        }
    }
    SegmentationSample::new(entry.id.clone(), tag, image, mask, fov)
}

pub fn load_entries(entries: &[DatasetEntry], tag: DatasetTag) -> Result<Vec<SegmentationSample>> {
    entries.iter().map(|e| load_entry(e, tag)).collect()
}

pub fn load_dataset(root: impl AsRef<Path>, tag: DatasetTag) -> Result<Vec<SegmentationSample>> {
    load_entries(&discover(root)?, tag)
}
