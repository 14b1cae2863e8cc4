//! Synthetic toy corpus and directory ingestion.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ImageBuffer, Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::trainer::Corpus;

/// Result of [`ingest_dataset`].
#[derive(Debug)]
pub struct Ingested {
    pub corpus: Corpus,
    /// Files smaller than the crop or not decodable.
    pub skipped: Vec<PathBuf>,
}

fn lerp(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

fn color(rng: &mut impl Rng) -> [f32; 3] {
    [rng.gen(), rng.gen(), rng.gen()]
}

/// One synthetic scene: a linear gradient with a few flat-shaded shapes and
/// light pixel noise.
pub fn synth_image(rng: &mut impl Rng, width: u32, height: u32) -> RgbImage {
    let (c0, c1) = (color(rng), color(rng));
    let angle: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let diag = (width.max(height)) as f32;
    let mut px: Vec<[f32; 3]> = (0..width * height)
        .map(|i| {
            let (x, y) = ((i % width) as f32, (i / width) as f32);
            let t = (((x - width as f32 / 2.0) * dx + (y - height as f32 / 2.0) * dy) / diag + 0.5).clamp(0.0, 1.0);
            lerp(c0, c1, t)
        })
        .collect();
    for _ in 0..rng.gen_range(2..6) {
        let c = color(rng);
        let cx = rng.gen_range(0.0..width as f32);
        let cy = rng.gen_range(0.0..height as f32);
        let r = rng.gen_range(4.0..diag / 3.0);
        let kind = rng.gen_range(0..3);
        let (hw, hh) = (r, rng.gen_range(0.4..1.0) * r);
        for y in 0..height {
            for x in 0..width {
                let (fx, fy) = (x as f32 - cx, y as f32 - cy);
                let inside = match kind {
                    0 => fx * fx + fy * fy <= r * r,
                    1 => fx.abs() <= hw && fy.abs() <= hh,
                    _ => fy <= hh && fy >= -hh && fx.abs() <= (hh - fy) * hw / (2.0 * hh),
                };
                if inside {
                    px[(y * width + x) as usize] = c;
                }
            }
        }
    }
    ImageBuffer::from_fn(width, height, |x, y| {
        let p = px[(y * width + x) as usize];
        let mut out = [0u8; 3];
        for (o, v) in out.iter_mut().zip(p) {
            let n: f32 = rng.gen_range(-0.02..0.02);
            *o = ((v + n).clamp(0.0, 1.0) * 255.0).round() as u8;
        }
        Rgb(out)
    })
}

/// Writes `count` PNG scenes named `img_00000.png`… into `dir`.
pub fn generate_corpus(dir: &Path, count: usize, width: u32, height: u32, seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..count {
        let img = synth_image(&mut rng, width, height);
        img.save(dir.join(format!("img_{i:05}.png"))).map_err(|e| Error::Image(e.to_string()))?;
    }
    Ok(())
}

/// Center `crop × crop` window of an RGB image as planar `[3, crop, crop]` in `[0, 1]`.
pub fn center_crop(img: &RgbImage, crop: u32) -> Option<Vec<f32>> {
    let (w, h) = img.dimensions();
    if w < crop || h < crop {
        return None;
    }
    let (x0, y0) = ((w - crop) / 2, (h - crop) / 2);
    let plane = (crop * crop) as usize;
    let mut out = vec![0.0; 3 * plane];
    for y in 0..crop {
        for x in 0..crop {
            let p = img.get_pixel(x0 + x, y0 + y).0;
            let i = (y * crop + x) as usize;
            for c in 0..3 {
                out[c * plane + i] = p[c] as f32 / 255.0;
            }
        }
    }
    Some(out)
}

/// Loads every decodable image under `dir` (sorted by name), center-crops it and
/// splits off `n_val` validation images with a seeded shuffle.
pub fn ingest_dataset(dir: &Path, crop: u32, split_seed: u64, n_val: usize) -> Result<Ingested> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).filter(|p| p.is_file()).collect();
    paths.sort();
    let mut crops = Vec::new();
    let mut skipped = Vec::new();
    for p in paths {
        match image::open(&p) {
            Ok(img) => match center_crop(&img.to_rgb8(), crop) {
                Some(c) => crops.push(c),
                None => skipped.push(p),
            },
            Err(_) => skipped.push(p),
        }
    }
    if crops.len() <= n_val {
        return Err(Error::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..crops.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
    let side = crop as usize;
    let stack = |idx: &[usize]| {
        let mut data = Vec::with_capacity(idx.len() * 3 * side * side);
        for &i in idx {
            data.extend_from_slice(&crops[i]);
        }
        Tensor::from_vec(idx.len(), 3, side, side, data)
    };
    let val = stack(&order[..n_val]);
    let train = stack(&order[n_val..]);
    Ok(Ingested { corpus: Corpus::new(train, val)?, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("pasic-data-{name}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&d);
        d
    }

    #[test]
    fn center_crop_examples() {
        let img = RgbImage::from_fn(512, 384, |x, y| Rgb([(x % 256) as u8, (y % 256) as u8, 7]));
        let c = center_crop(&img, 256).unwrap();
        assert_eq!(c.len(), 3 * 256 * 256);
        assert!(c.iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(c[0], 128.0 / 255.0);
        let exact = RgbImage::from_fn(4, 4, |x, y| Rgb([(x * 10) as u8, (y * 10) as u8, 255]));
        let e = center_crop(&exact, 4).unwrap();
        assert_eq!(e[5], 10.0 / 255.0);
        assert_eq!(e[32 + 5], 1.0);
        assert!(center_crop(&exact, 5).is_none());
    }

    #[test]
    fn ingest_is_deterministic_and_skips_small_files() {
        let dir = tmp("ingest");
        generate_corpus(&dir, 12, 40, 36, 1).unwrap();
        RgbImage::new(8, 8).save(dir.join("small.png")).unwrap();
        fs::write(dir.join("junk.txt"), b"not an image").unwrap();
        let a = ingest_dataset(&dir, 32, 5, 3).unwrap();
        let b = ingest_dataset(&dir, 32, 5, 3).unwrap();
        assert_eq!(a.corpus, b.corpus);
        assert_eq!(a.corpus.train.shape(), [9, 3, 32, 32]);
        assert_eq!(a.corpus.val.shape(), [3, 3, 32, 32]);
        assert_eq!(a.skipped.len(), 2);
        let c = ingest_dataset(&dir, 32, 6, 3).unwrap();
        assert_ne!(a.corpus.val, c.corpus.val);
        assert!(matches!(ingest_dataset(&dir, 64, 5, 3), Err(Error::EmptyDataset)));
        fs::remove_dir_all(dir).unwrap();
    }
}
