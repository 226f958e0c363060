use std::path::{Path, PathBuf};

use fsnet::data::{
    augment, discover, load_dataset, load_image, load_mask, make_splits, sample_key, AugmentConfig, AugmentOp, AugmentPlan,
    DatasetTag, Rotation, SegmentationSample, SplitOptions, Subset,
};
use fsnet::grid::{Grid, Mask};
use fsnet::Error;
use image::{DynamicImage, GrayImage, Luma, Rgb, RgbImage};

fn tiny_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/tiny")
}

#[test]
fn bundled_fixtures_load_with_split_hints() {
    let entries = discover(tiny_root()).unwrap();
    let ids: Vec<&str> = entries.iter().map(|e| e.id.as_str()).collect();
    assert_eq!(ids, ["synth_000", "synth_001", "synth_002", "synth_003", "synth_004", "synth_005"]);
    assert!(entries.iter().all(|e| e.fov.is_some()));
    let hints: Vec<Option<Subset>> = entries.iter().map(|e| e.hint).collect();
    assert_eq!(hints.iter().filter(|h| **h == Some(Subset::Test)).count(), 2);

    let samples = load_dataset(tiny_root(), DatasetTag::Custom).unwrap();
    for s in &samples {
        assert_eq!(s.dims(), (32, 32));
        assert!(s.mask.count() > 0 && s.mask.count() < s.mask.len());
        assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    let list: Vec<(&str, Option<Subset>)> = entries.iter().map(|e| (e.id.as_str(), e.hint)).collect();
    let plan = make_splits(DatasetTag::Custom, &list, &SplitOptions::default()).unwrap();
    assert_eq!(plan.test, ["synth_004", "synth_005"]);
}

/// Writes a tiny tree with the naming used by the public fundus datasets.
fn drive_like(root: &Path) {
    for (split, ids) in [("training", [21, 22]), ("test", [1, 2])] {
        let d = root.join(split);
        for sub in ["images", "1st_manual", "mask"] {
            std::fs::create_dir_all(d.join(sub)).unwrap();
        }
        for id in ids {
            let suffix = if split == "training" { "training" } else { "test" };
            let img = RgbImage::from_fn(6, 5, |x, y| Rgb([(x * 40) as u8, (y * 50) as u8, 10]));
            img.save(d.join(format!("images/{id:02}_{suffix}.tif"))).unwrap();
            let lab = GrayImage::from_fn(6, 5, |x, _| Luma([if x == 2 { 255 } else { 0 }]));
            // GIF has no grayscale encoder
            let gif = |g: GrayImage, name: String| DynamicImage::ImageLuma8(g).to_rgb8().save(d.join(name)).unwrap();
            gif(lab, format!("1st_manual/{id:02}_manual1.gif"));
            gif(GrayImage::from_pixel(6, 5, Luma([255])), format!("mask/{id:02}_{suffix}_mask.gif"));
        }
    }
}

#[test]
fn public_dataset_naming_is_matched() {
    let dir = tempfile::tempdir().unwrap();
    drive_like(dir.path());
    let samples = load_dataset(dir.path(), DatasetTag::Drive).unwrap();
    let ids: Vec<&str> = samples.iter().map(|s| s.id.as_str()).collect();
    assert_eq!(ids, ["01", "02", "21", "22"]);
    for s in &samples {
        assert_eq!(s.dims(), (5, 6));
        assert_eq!(s.mask.count(), 5);
        assert!(*s.mask.get(3, 2));
        assert_eq!(s.fov.as_ref().unwrap().count(), 30);
        // luma of (40x, 50y, 10)
        let want = (0.299 * 120.0 + 0.587 * 100.0 + 0.114 * 10.0) / 255.0;
        assert!((s.image.get(2, 3) - want as f32).abs() < 1e-5);
    }
    let entries = discover(dir.path()).unwrap();
    let list: Vec<(&str, Option<Subset>)> = entries.iter().map(|e| (e.id.as_str(), e.hint)).collect();
    let plan = make_splits(DatasetTag::Drive, &list, &SplitOptions { validation_fraction: 0.0, ..Default::default() })
        .unwrap();
    assert_eq!(plan.train, ["21", "22"]);
    assert_eq!(plan.test, ["01", "02"]);
}

#[test]
fn suffixes_strip_to_shared_ids() {
    for (stem, id) in [
        ("21_training", "21"),
        ("21_manual1", "21"),
        ("21_training_mask", "21"),
        ("Image_01L_1stHO", "Image_01L"),
        ("im0001.ah", "im0001"),
        ("im0001.vk", "im0001"),
        ("_mask", "_mask"),
    ] {
        assert_eq!(sample_key(stem), id, "{stem}");
    }
}

#[test]
fn broken_layouts_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(discover(dir.path()), Err(Error::Dataset(_))));

    std::fs::create_dir_all(dir.path().join("images")).unwrap();
    std::fs::create_dir_all(dir.path().join("labels")).unwrap();
    GrayImage::new(4, 4).save(dir.path().join("images/a.png")).unwrap();
    let err = discover(dir.path()).unwrap_err();
    assert!(err.to_string().contains("no annotation"), "{err}");

    GrayImage::new(4, 4).save(dir.path().join("labels/a.png")).unwrap();
    assert_eq!(discover(dir.path()).unwrap().len(), 1);
    GrayImage::new(4, 4).save(dir.path().join("labels/a_manual1.png")).unwrap();
    assert!(discover(dir.path()).is_err());

    assert!(matches!(load_image(dir.path().join("missing.png")), Err(Error::Io { .. })));
    assert!(load_mask(dir.path().join("images/a.png")).unwrap().count() == 0);
}

fn blob_sample(h: usize, w: usize) -> SegmentationSample {
    let mask: Mask = Grid::from_fn(h, w, |y, x| {
        let (dy, dx) = (y as f64 - 9.0, x as f64 - 14.0);
        dy * dy / 25.0 + dx * dx / 64.0 <= 1.0 || (y + 2 * x) % 11 == 0
    });
    let image = mask.map(|&b| if b { 0.8 } else { 0.2 });
    SegmentationSample::new("blob", DatasetTag::Custom, image, mask, None).unwrap()
}

#[test]
fn flips_preserve_foreground_exactly() {
    let s = blob_sample(20, 30);
    let cfg = AugmentConfig { ops: [AugmentOp::Flip].into(), probability: 1.0, ..Default::default() };
    for seed in 0..20 {
        let a = augment(&s, &cfg, seed).unwrap();
        assert_eq!(a.mask.count(), s.mask.count());
    }
}

/// Nearest-neighbour rotation about the image center, written with complex
/// multiplication: the output offset turned by the angle names the source.
fn reference_rotation(m: &Mask, angle: f64) -> Mask {
    let (h, w) = m.dims();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let (re, im) = (angle.cos(), angle.sin());
    Grid::from_fn(h, w, |y, x| {
        let (u, v) = (x as f64 - cx, y as f64 - cy);
        let (su, sv) = (u * re - v * im, u * im + v * re);
        let (sy, sx) = ((sv + cy).round(), (su + cx).round());
        sy >= 0.0 && sx >= 0.0 && (sy as usize) < h && (sx as usize) < w && *m.get(sy as usize, sx as usize)
    })
}

#[test]
fn rotation_matches_a_reference_warp() {
    let s = blob_sample(20, 30);
    let cfg = AugmentConfig {
        ops: [AugmentOp::Rotation].into(),
        probability: 1.0,
        rotation: Rotation::Continuous { max_degrees: 25.0 },
        ..Default::default()
    };
    for seed in 0..20 {
        let plan = AugmentPlan::sample(&cfg, 20, 30, seed);
        assert!(plan.angle.abs() <= 25f64.to_radians() + 1e-12);
        let got = augment(&s, &cfg, seed).unwrap().mask;
        let want = reference_rotation(&s.mask, plan.angle);
        let differ = got.data().iter().zip(want.data()).filter(|(a, b)| a != b).count();
        // only pixels whose source lands on a rounding boundary may disagree
        assert!(differ <= got.len() / 200, "seed {seed}: {differ} pixels differ");
        let (a, b) = (got.count() as i64, want.count() as i64);
        assert!((a - b).abs() <= 2, "seed {seed}: {a} vs {b}");
    }
}
