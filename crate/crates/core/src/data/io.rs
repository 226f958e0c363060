//! Reading and writing grayscale images and masks.

use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageReader, Luma};

use super::preprocess::{rgb_to_gray, RgbImage};
use crate::error::{Error, Result};
use crate::grid::{Grid, Image, Mask};

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn decode(path: &Path) -> Result<DynamicImage> {
    ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| image_err(path, e))
}

/// Intensities in [0, 1]; color files go through the luminance weights.
fn to_gray(img: &DynamicImage) -> Image {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if img.color().has_color() {
        let rgb = img.to_rgb32f();
        let px: RgbImage = Grid::new(h, w, rgb.pixels().map(|p| p.0).collect()).expect("decoder dims");
        rgb_to_gray(&px)
    } else {
        let l = img.to_luma32f();
        Grid::new(h, w, l.into_raw()).expect("decoder dims")
    }
}

/// Grayscale image in [0, 1] from PNG, PGM/PPM, TIFF, GIF or JPEG, 8 or 16 bit.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    Ok(to_gray(&decode(path)?))
}

/// Binary mask: a pixel is set when it exceeds half of the brightest value in
/// the file, so both {0, 1} and {0, 255} encodings work. An all-zero file
/// gives an empty mask.
pub fn load_mask(path: impl AsRef<Path>) -> Result<Mask> {
    Ok(binarize(&load_image(path)?))
}

pub fn binarize(gray: &Image) -> Mask {
    let max = gray.data().iter().copied().fold(0.0f32, f32::max);
    gray.map(|&v| max > 0.0 && 2.0 * v > max)
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

/// 16-bit grayscale, values clamped to [0, 1] and scaled by 65535.
pub fn save_image16(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let data: Vec<u16> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, data).expect("dims agree");
    buf.save(path).map_err(|e| image_err(path, e))
}

/// 8-bit grayscale, values clamped to [0, 1] and scaled by 255.
pub fn save_image8(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let data: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf: ImageBuffer<Luma<u8>, Vec<u8>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, data).expect("dims agree");
    buf.save(path).map_err(|e| image_err(path, e))
}

/// 8-bit mask with 0 and 255.
pub fn save_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    save_image8(&mask.map(|&b| if b { 1.0 } else { 0.0 }), path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binarize_tolerates_encodings() {
        let ones = Grid::new(1, 3, vec![0.0, 1.0 / 255.0, 0.0]).unwrap();
        assert_eq!(binarize(&ones).data(), &[false, true, false]);
        let full = Grid::new(1, 3, vec![0.0, 1.0, 0.4]).unwrap();
        assert_eq!(binarize(&full).data(), &[false, true, false]);
        assert_eq!(binarize(&Grid::filled(2, 2, 0.0)).count(), 0);
    }

    #[test]
    fn sixteen_bit_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Grid::from_fn(5, 7, |y, x| (y * 7 + x) as f32 / 34.0);
        let p = dir.path().join("a.png");
        save_image16(&img, &p).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!(back.dims(), (5, 7));
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 65535.0);
        }
    }

    #[test]
    fn pgm_and_mask_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let m = Grid::from_fn(4, 6, |y, x| (x + y) % 3 == 0);
        let p = dir.path().join("m.pgm");
        save_mask(&m, &p).unwrap();
        assert_eq!(load_mask(&p).unwrap(), m);
    }

    #[test]
    fn color_file_uses_luminance_weights() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("red.ppm");
        let buf: ImageBuffer<image::Rgb<u8>, Vec<u8>> = ImageBuffer::from_raw(1, 1, vec![255, 0, 0]).unwrap();
        buf.save(&p).unwrap();
        let g = load_image(&p).unwrap();
        assert!((g.data()[0] - 0.299).abs() < 1e-6);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(load_image("/nonexistent/x.png"), Err(Error::Io { .. })));
    }
}
