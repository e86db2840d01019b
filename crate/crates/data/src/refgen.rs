//! Procedural reference images for desk-scale corpora and calibration sets.
//!
//! The generator layers smooth multi-octave gradients, colored shapes and
//! fine texture so every reference carries the statistics the distortion
//! families act on: high-frequency detail, chroma variance and mid-range
//! brightness.

use crate::error::DataError;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use satqa_core::rng::{derive_seed, rng_from_seed};
use satqa_core::RgbImage;
use std::path::{Path, PathBuf};

pub fn generate_reference_image(seed: u64, width: usize, height: usize) -> RgbImage {
    let mut rng = rng_from_seed(seed);
    let mut img = RgbImage::new(width, height);

    // Smooth base: three octaves of bilinearly interpolated value noise.
    let octaves = [6usize, 3, 2];
    let amps = [0.30f32, 0.18, 0.10];
    let mut grids = Vec::new();
    for cells in octaves {
        let gw = cells + 1;
        let grid: Vec<f32> = (0..gw * gw * 3).map(|_| rng.random_range(0.0..1.0)).collect();
        grids.push((cells, grid));
    }
    for y in 0..height {
        for x in 0..width {
            for c in 0..3 {
                let mut v = 0.45f32;
                for ((cells, grid), amp) in grids.iter().zip(amps) {
                    let gw = cells + 1;
                    let fx = x as f32 / width as f32 * *cells as f32;
                    let fy = y as f32 / height as f32 * *cells as f32;
                    let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
                    let (tx, ty) = (fx - x0 as f32, fy - y0 as f32);
                    let g = |gx: usize, gy: usize| grid[(gy * gw + gx) * 3 + c];
                    let top = g(x0, y0) * (1.0 - tx) + g(x0 + 1, y0) * tx;
                    let bot = g(x0, y0 + 1) * (1.0 - tx) + g(x0 + 1, y0 + 1) * tx;
                    v += amp * (top * (1.0 - ty) + bot * ty - 0.5);
                }
                img.set(x, y, c, v);
            }
        }
    }

    // Colored shapes give hard edges and chroma.
    let n_shapes = rng.random_range(6..12);
    for _ in 0..n_shapes {
        let color = [
            rng.random_range(0.05f32..0.95),
            rng.random_range(0.05f32..0.95),
            rng.random_range(0.05f32..0.95),
        ];
        let cx = rng.random_range(0..width) as f32;
        let cy = rng.random_range(0..height) as f32;
        let rx = rng.random_range(width as f32 * 0.05..width as f32 * 0.3);
        let ry = rng.random_range(height as f32 * 0.05..height as f32 * 0.3);
        let alpha = rng.random_range(0.35f32..0.85);
        let ellipse = rng.random_bool(0.5);
        for y in 0..height {
            for x in 0..width {
                let dx = (x as f32 - cx) / rx;
                let dy = (y as f32 - cy) / ry;
                let inside = if ellipse {
                    dx * dx + dy * dy <= 1.0
                } else {
                    dx.abs() <= 1.0 && dy.abs() <= 1.0
                };
                if inside {
                    for c in 0..3 {
                        let v = img.get(x, y, c);
                        img.set(x, y, c, v * (1.0 - alpha) + color[c] * alpha);
                    }
                }
            }
        }
    }

    // Fine texture so blur and compression have detail to destroy.
    for v in img.data_mut() {
        *v += rng.random_range(-0.035f32..0.035);
    }
    img.clamp_in_place();
    img
}

/// Writes `count` generated references into `dir` as PNG and returns their
/// paths in filename order.
pub fn generate_reference_set(
    dir: &Path,
    count: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<PathBuf>, DataError> {
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        let img = generate_reference_image(derive_seed(seed, 0x5ef5, i as u64), size, size);
        let path = dir.join(format!("ref_{i:04}.png"));
        img.save_png(&path)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Uniform random crop used by tests and the SCL view pipeline.
pub fn random_crop(image: &RgbImage, size: usize, rng: &mut ChaCha8Rng) -> RgbImage {
    let x0 = if image.width() > size {
        rng.random_range(0..=image.width() - size)
    } else {
        0
    };
    let y0 = if image.height() > size {
        rng.random_range(0..=image.height() - size)
    } else {
        0
    };
    image.crop(x0, y0, size, size)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn references_have_chroma_and_detail() {
        let img = generate_reference_image(5, 64, 64);
        let n = (img.width() * img.height()) as f32;
        let mean: f32 = img.data().iter().sum::<f32>() / (n * 3.0);
        assert!(mean > 0.2 && mean < 0.8, "mean {mean}");
        // Chroma: average |channel - luma| must be clearly nonzero.
        let mut chroma = 0.0f32;
        for y in 0..img.height() {
            for x in 0..img.width() {
                let l = img.luma(x, y);
                for c in 0..3 {
                    chroma += (img.get(x, y, c) - l).abs();
                }
            }
        }
        assert!(chroma / (n * 3.0) > 0.02);
        // High-frequency energy: neighboring pixel differences.
        let mut hf = 0.0f32;
        for y in 0..img.height() {
            for x in 1..img.width() {
                hf += (img.get(x, y, 0) - img.get(x - 1, y, 0)).abs();
            }
        }
        assert!(hf / n > 0.01);
    }

    #[test]
    fn generation_is_deterministic() {
        assert_eq!(
            generate_reference_image(9, 32, 32),
            generate_reference_image(9, 32, 32)
        );
    }
}
