//! PNG images and raw float maps.

use std::io::{Read, Write};
use std::path::Path;

use image::{DynamicImage, GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::raster::Image;

/// Loads a PNG as linear RGB in `[0, 1]`, compositing any alpha over `background`.
pub fn load_png(path: &Path, background: &Vec3) -> Result<Image> {
    let rgba = image::open(path)?.to_rgba32f();
    let (w, h) = (rgba.width() as usize, rgba.height() as usize);
    let mut out = Image::new(w, h, 3);
    for (x, y, p) in rgba.enumerate_pixels() {
        let a = p[3] as f64;
        for c in 0..3 {
            out.set(x as usize, y as usize, c, p[c] as f64 * a + background[c] * (1.0 - a));
        }
    }
    Ok(out)
}

/// Writes a 1- or 3-channel image clamped to `[0, 1]` as 8-bit PNG.
pub fn save_png(path: &Path, img: &Image) -> Result<()> {
    let quantize = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    let bytes: Vec<u8> = img.data.iter().map(|&v| quantize(v)).collect();
    let (w, h) = (img.width as u32, img.height as u32);
    let dynamic = match img.channels {
        1 => DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, bytes).expect("buffer sized from image")),
        3 => DynamicImage::ImageRgb8(RgbImage::from_raw(w, h, bytes).expect("buffer sized from image")),
        c => return Err(Error::Format(format!("cannot write a {c}-channel image as PNG"))),
    };
    dynamic.save(path)?;
    Ok(())
}

/// Maps unit normals from `[-1, 1]` to `[0, 1]` for display.
pub fn normal_to_rgb(normal: &Image) -> Image {
    Image { data: normal.data.iter().map(|v| 0.5 * (v + 1.0)).collect(), ..normal.clone() }
}

/// Single-channel float map: `u32` width, `u32` height, then `f32` values, all little-endian.
pub fn save_fmap(path: &Path, img: &Image) -> Result<()> {
    if img.channels != 1 {
        return Err(Error::Format(format!("float maps hold one channel, got {}", img.channels)));
    }
    let mut bytes = Vec::with_capacity(8 + 4 * img.data.len());
    bytes.extend((img.width as u32).to_le_bytes());
    bytes.extend((img.height as u32).to_le_bytes());
    for v in &img.data {
        bytes.extend((*v as f32).to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn load_fmap(path: &Path) -> Result<Image> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let word = |i: usize| -> [u8; 4] { bytes[i..i + 4].try_into().expect("four bytes") };
    if bytes.len() < 8 {
        return Err(Error::Format(format!("{}: truncated header", path.display())));
    }
    let (w, h) = (u32::from_le_bytes(word(0)) as usize, u32::from_le_bytes(word(4)) as usize);
    if bytes.len() != 8 + 4 * w * h {
        return Err(Error::Format(format!("{}: expected {} values", path.display(), w * h)));
    }
    let data = (0..w * h).map(|i| f32::from_le_bytes(word(8 + 4 * i)) as f64).collect();
    Image::from_vec(w, h, 1, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_quantized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let mut img = Image::new(3, 2, 3);
        img.set(1, 1, 0, 1.0);
        img.set(2, 0, 2, 0.5);
        img.set(0, 0, 1, 7.0);
        save_png(&path, &img).unwrap();
        let back = load_png(&path, &Vec3::zeros()).unwrap();
        assert_eq!(back.get(1, 1, 0), 1.0);
        assert!((back.get(2, 0, 2) - 0.5).abs() <= 0.5 / 255.0 + 1e-6);
        assert_eq!(back.get(0, 0, 1), 1.0);
    }

    #[test]
    fn alpha_composites_over_background() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgba.png");
        image::RgbaImage::from_raw(2, 1, vec![255, 0, 0, 0, 0, 0, 255, 255]).unwrap().save(&path).unwrap();
        let img = load_png(&path, &Vec3::repeat(1.0)).unwrap();
        assert_eq!(img.vec3(0, 0), Vec3::repeat(1.0));
        assert_eq!(img.vec3(1, 0), Vec3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn fmap_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.fmap");
        let img = Image::from_vec(3, 2, 1, vec![0.0, 1.5, 2.25, -1.0, 3.0, 4.5]).unwrap();
        save_fmap(&path, &img).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 8 + 24);
        assert_eq!(load_fmap(&path).unwrap(), img);
        std::fs::write(&path, [1u8, 0, 0]).unwrap();
        assert!(load_fmap(&path).is_err());
    }
}
