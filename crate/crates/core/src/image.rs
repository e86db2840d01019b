//! Planar RGB image with float intensities in [0, 1].

use crate::error::CoreError;
use crate::tensor::Arr;
use image::{DynamicImage, ExtendedColorType, ImageBuffer, ImageEncoder, Rgb};
use ndarray::IxDyn;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    /// Row-major interleaved RGB.
    data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        RgbImage {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height * 3, "raw buffer size mismatch");
        RgbImage {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    pub fn clamp_in_place(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn load(path: &Path) -> Result<Self, CoreError> {
        let img = image::open(path)
            .map_err(|e| CoreError::Image {
                path: path.to_path_buf(),
                source: e,
            })?
            .to_rgb8();
        Ok(Self::from_rgb8(&img))
    }

    fn from_rgb8(img: &image::RgbImage) -> Self {
        let (w, h) = (img.width() as usize, img.height() as usize);
        let data = img.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
        RgbImage {
            width: w,
            height: h,
            data,
        }
    }

    pub fn to_rgb8_bytes(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0 + 0.5) as u8)
            .collect()
    }

    pub fn save_png(&self, path: &Path) -> Result<(), CoreError> {
        image::save_buffer(
            path,
            &self.to_rgb8_bytes(),
            self.width as u32,
            self.height as u32,
            ExtendedColorType::Rgb8,
        )
        .map_err(|e| CoreError::Image {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn save_jpeg(&self, path: &Path, quality: u8) -> Result<(), CoreError> {
        let bytes = self.encode_jpeg(quality).map_err(|e| CoreError::Image {
            path: path.to_path_buf(),
            source: e,
        })?;
        std::fs::write(path, bytes).map_err(|e| CoreError::io(path, e))
    }

    pub fn encode_jpeg(&self, quality: u8) -> Result<Vec<u8>, image::ImageError> {
        let mut out = Vec::new();
        let encoder = image::codecs::jpeg::JpegEncoder::new_with_quality(&mut out, quality);
        encoder.write_image(
            &self.to_rgb8_bytes(),
            self.width as u32,
            self.height as u32,
            ExtendedColorType::Rgb8,
        )?;
        Ok(out)
    }

    /// Encode to JPEG at the given quality and decode back, in memory.
    pub fn jpeg_roundtrip(&self, quality: u8) -> Result<Self, image::ImageError> {
        let bytes = self.encode_jpeg(quality)?;
        let decoded = image::load_from_memory(&bytes)?.to_rgb8();
        Ok(Self::from_rgb8(&decoded))
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        assert!(x0 + w <= self.width && y0 + h <= self.height, "crop out of bounds");
        let mut out = RgbImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    out.set(x, y, c, self.get(x0 + x, y0 + y, c));
                }
            }
        }
        out
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut out = RgbImage::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..3 {
                    out.set(self.width - 1 - x, y, c, self.get(x, y, c));
                }
            }
        }
        out
    }

    pub fn flip_vertical(&self) -> Self {
        let mut out = RgbImage::new(self.width, self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..3 {
                    out.set(x, self.height - 1 - y, c, self.get(x, y, c));
                }
            }
        }
        out
    }

    /// Cubic (Catmull-Rom) resampling.
    pub fn resize_bicubic(&self, width: usize, height: usize) -> Self {
        let buffer: ImageBuffer<Rgb<f32>, Vec<f32>> = ImageBuffer::from_raw(
            self.width as u32,
            self.height as u32,
            self.data.clone(),
        )
        .expect("buffer size");
        let resized = image::imageops::resize(
            &buffer,
            width as u32,
            height as u32,
            image::imageops::FilterType::CatmullRom,
        );
        let mut out = RgbImage::from_raw(width, height, resized.into_raw());
        out.clamp_in_place();
        out
    }

    /// Channel-first f64 tensor `(3, h, w)`.
    pub fn to_chw(&self) -> Arr {
        let mut arr = Arr::zeros(IxDyn(&[3, self.height, self.width]));
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..3 {
                    arr[[c, y, x]] = self.get(x, y, c) as f64;
                }
            }
        }
        arr
    }

    /// Luma plane (Rec. 601 weights).
    pub fn luma(&self, x: usize, y: usize) -> f32 {
        0.299 * self.get(x, y, 0) + 0.587 * self.get(x, y, 1) + 0.114 * self.get(x, y, 2)
    }
}

impl From<&DynamicImage> for RgbImage {
    fn from(img: &DynamicImage) -> Self {
        Self::from_rgb8(&img.to_rgb8())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gradient_image(w: usize, h: usize) -> RgbImage {
        let mut img = RgbImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                img.set(x, y, 0, x as f32 / w as f32);
                img.set(x, y, 1, y as f32 / h as f32);
                img.set(x, y, 2, 0.5);
            }
        }
        img
    }

    #[test]
    fn crop_and_flip() {
        let img = gradient_image(8, 6);
        let c = img.crop(2, 1, 4, 3);
        assert_eq!((c.width(), c.height()), (4, 3));
        assert_eq!(c.get(0, 0, 0), img.get(2, 1, 0));
        let f = img.flip_horizontal();
        assert_eq!(f.get(0, 0, 0), img.get(7, 0, 0));
        let v = img.flip_vertical();
        assert_eq!(v.get(0, 0, 1), img.get(0, 5, 1));
    }

    #[test]
    fn png_roundtrip_is_lossless_at_u8() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let img = gradient_image(16, 12);
        img.save_png(&path).unwrap();
        let loaded = RgbImage::load(&path).unwrap();
        // Quantization to u8 happens once at save; reload must match exactly.
        let requantized = RgbImage::from_raw(
            16,
            12,
            img.to_rgb8_bytes().iter().map(|&b| b as f32 / 255.0).collect(),
        );
        assert_eq!(loaded, requantized);
    }

    #[test]
    fn jpeg_roundtrip_changes_pixels() {
        let img = gradient_image(32, 32);
        let rt = img.jpeg_roundtrip(30).unwrap();
        assert_eq!((rt.width(), rt.height()), (32, 32));
        assert!(img.data().iter().zip(rt.data()).any(|(a, b)| a != b));
    }
}
