//! Image, scribble and mask files.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageFormat};

use crate::error::{Error, Result};
use crate::field::{ImageGrid, ScribbleLabel, ScribbleMask, SegmentationMask};

/// Converts a decoded 8-bit gray or RGB image to `[0, 1]` intensities.
/// Alpha is dropped; 16-bit inputs are reduced to 8 bits first.
pub fn image_to_grid(img: &DynamicImage) -> Result<ImageGrid> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = matches!(
        img,
        DynamicImage::ImageLuma8(_)
            | DynamicImage::ImageLumaA8(_)
            | DynamicImage::ImageLuma16(_)
            | DynamicImage::ImageLumaA16(_)
    );
    let data: Vec<f64> = if gray {
        img.to_luma8()
            .into_raw()
            .into_iter()
            .map(|v| v as f64 / 255.0)
            .collect()
    } else {
        img.to_rgb8().into_raw().into_iter().map(|v| v as f64 / 255.0).collect()
    };
    ImageGrid::new(w, h, if gray { 1 } else { 3 }, data)
}

pub fn decode_image(bytes: &[u8]) -> Result<ImageGrid> {
    image_to_grid(&image::load_from_memory(bytes)?)
}

/// Width and height from the header alone, so oversized uploads can be
/// refused before decoding.
pub fn image_dimensions(bytes: &[u8]) -> Result<(usize, usize)> {
    let (w, h) = image::ImageReader::new(Cursor::new(bytes))
        .with_guessed_format()?
        .into_dimensions()?;
    Ok((w as usize, h as usize))
}

pub fn load_image(path: &Path) -> Result<ImageGrid> {
    image_to_grid(&image::open(path)?)
}

/// Pure red is foreground, pure blue background, anything else unmarked.
pub fn scribbles_from_image(img: &DynamicImage) -> ScribbleMask {
    let rgb = img.to_rgb8();
    let labels = rgb
        .pixels()
        .map(|p| match p.0 {
            [255, 0, 0] => ScribbleLabel::Foreground,
            [0, 0, 255] => ScribbleLabel::Background,
            _ => ScribbleLabel::Unmarked,
        })
        .collect();
    ScribbleMask::from_labels(rgb.width() as usize, rgb.height() as usize, labels).expect("label count matches image")
}

pub fn decode_scribbles(bytes: &[u8]) -> Result<ScribbleMask> {
    Ok(scribbles_from_image(&image::load_from_memory(bytes)?))
}

pub fn load_scribbles(path: &Path) -> Result<ScribbleMask> {
    Ok(scribbles_from_image(&image::open(path)?))
}

/// Scribbles rendered back to the red/blue convention on black.
pub fn encode_scribbles_png(s: &ScribbleMask) -> Result<Vec<u8>> {
    let mut img = image::RgbImage::new(s.width() as u32, s.height() as u32);
    for (p, l) in img.pixels_mut().zip(s.labels()) {
        p.0 = match l {
            ScribbleLabel::Foreground => [255, 0, 0],
            ScribbleLabel::Background => [0, 0, 255],
            ScribbleLabel::Unmarked => [0, 0, 0],
        };
    }
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

/// 8-bit grayscale PNG, foreground 255 and background 0.
pub fn encode_mask_png(mask: &SegmentationMask) -> Result<Vec<u8>> {
    let img = GrayImage::from_raw(
        mask.width as u32,
        mask.height as u32,
        mask.labels.iter().map(|&l| if l == 1 { 255 } else { 0 }).collect(),
    )
    .ok_or_else(|| Error::DimensionMismatch("mask buffer".into()))?;
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn save_mask(mask: &SegmentationMask, path: &Path) -> Result<()> {
    std::fs::write(path, encode_mask_png(mask)?)?;
    Ok(())
}

/// Any non-zero gray level is foreground.
pub fn mask_from_image(img: &DynamicImage) -> SegmentationMask {
    let g = img.to_luma8();
    let labels = g.pixels().map(|p| u8::from(p.0[0] > 0)).collect();
    SegmentationMask::new(g.width() as usize, g.height() as usize, labels).expect("binary labels")
}

pub fn decode_mask(bytes: &[u8]) -> Result<SegmentationMask> {
    Ok(mask_from_image(&image::load_from_memory(bytes)?))
}

pub fn load_mask(path: &Path) -> Result<SegmentationMask> {
    Ok(mask_from_image(&image::open(path)?))
}

/// Writes an image grid back as an 8-bit PNG (gray or RGB).
pub fn encode_image_png(img: &ImageGrid) -> Result<Vec<u8>> {
    let raw: Vec<u8> = img.data().iter().map(|v| (v * 255.0).round() as u8).collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let dynamic = match img.channels() {
        1 => DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, raw).expect("size")),
        3 => DynamicImage::ImageRgb8(image::RgbImage::from_raw(w, h, raw).expect("size")),
        c => return Err(Error::InvalidImage(format!("cannot encode {c} channels"))),
    };
    let mut out = Cursor::new(Vec::new());
    dynamic.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}
