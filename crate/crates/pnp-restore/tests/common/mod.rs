//! Shared fixtures for the integration suites: deterministic synthetic
//! grayscale images with sharp edges, smooth gradients, and texture, so that
//! blurring measurably hurts PSNR and restoration has structure to recover.

use std::path::Path;

use ndarray::Array2;
use pnp_restore::image::{save_image, ImageGray};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn synthetic_image(h: usize, w: usize, seed: u64) -> ImageGray {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: f64 = rng.gen_range(80.0..176.0);
    let gx: f64 = rng.gen_range(-0.5..0.5);
    let gy: f64 = rng.gen_range(-0.5..0.5);
    let mut data = Array2::from_shape_fn((h, w), |(i, j)| base + gy * i as f64 + gx * j as f64);

    // piecewise-constant shapes give the sharp edges degradation destroys
    let shapes = 6 + (h * w) / 1024;
    for _ in 0..shapes {
        let level: f64 = rng.gen_range(10.0..246.0);
        if rng.gen_bool(0.5) {
            let mut i0 = rng.gen_range(0..h);
            let mut i1 = rng.gen_range(0..h);
            let mut j0 = rng.gen_range(0..w);
            let mut j1 = rng.gen_range(0..w);
            if i0 > i1 {
                std::mem::swap(&mut i0, &mut i1);
            }
            if j0 > j1 {
                std::mem::swap(&mut j0, &mut j1);
            }
            for i in i0..=i1 {
                for j in j0..=j1 {
                    data[(i, j)] = level;
                }
            }
        } else {
            let ci = rng.gen_range(0.0..h as f64);
            let cj = rng.gen_range(0.0..w as f64);
            let r = rng.gen_range(2.0..(h.min(w) as f64 / 3.0));
            for i in 0..h {
                for j in 0..w {
                    let d2 = (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2);
                    if d2 <= r * r {
                        data[(i, j)] = level;
                    }
                }
            }
        }
    }

    // oriented sinusoid bands: mid-frequency texture (periods a blur kernel
    // attenuates without erasing, so deconvolution has detail to recover)
    for _ in 0..3 {
        let period = rng.gen_range(7.0..14.0);
        let amp: f64 = rng.gen_range(45.0..75.0);
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let (ct, st) = (theta.cos(), theta.sin());
        let i0 = rng.gen_range(0..h / 2);
        let i1 = (i0 + h / 3).min(h);
        let j0 = rng.gen_range(0..w / 2);
        let j1 = (j0 + w / 2).min(w);
        for i in i0..i1 {
            for j in j0..j1 {
                let u = ct * i as f64 + st * j as f64;
                data[(i, j)] += amp * (std::f64::consts::TAU * u / period).sin();
            }
        }
    }

    data.mapv_inplace(|v| v.clamp(0.0, 255.0));
    ImageGray::new(data).unwrap()
}

pub fn synthetic_dataset(n: usize, h: usize, w: usize, seed: u64) -> Vec<ImageGray> {
    (0..n)
        .map(|i| synthetic_image(h, w, seed.wrapping_add(i as u64)))
        .collect()
}

/// Shapes-and-gradients only (no stripe band): restoration evaluation images
/// whose lost detail is actually recoverable at moderate blur widths.
#[allow(dead_code)]
pub fn synthetic_shapes_image(h: usize, w: usize, seed: u64) -> ImageGray {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: f64 = rng.gen_range(80.0..176.0);
    let gx: f64 = rng.gen_range(-0.5..0.5);
    let gy: f64 = rng.gen_range(-0.5..0.5);
    let mut data = Array2::from_shape_fn((h, w), |(i, j)| base + gy * i as f64 + gx * j as f64);
    let shapes = 8 + (h * w) / 1024;
    for _ in 0..shapes {
        let level: f64 = rng.gen_range(10.0..246.0);
        if rng.gen_bool(0.5) {
            let mut i0 = rng.gen_range(0..h);
            let mut i1 = rng.gen_range(0..h);
            let mut j0 = rng.gen_range(0..w);
            let mut j1 = rng.gen_range(0..w);
            if i0 > i1 {
                std::mem::swap(&mut i0, &mut i1);
            }
            if j0 > j1 {
                std::mem::swap(&mut j0, &mut j1);
            }
            for i in i0..=i1 {
                for j in j0..=j1 {
                    data[(i, j)] = level;
                }
            }
        } else {
            let ci = rng.gen_range(0.0..h as f64);
            let cj = rng.gen_range(0.0..w as f64);
            let r = rng.gen_range(3.0..(h.min(w) as f64 / 3.0));
            for i in 0..h {
                for j in 0..w {
                    let d2 = (i as f64 - ci).powi(2) + (j as f64 - cj).powi(2);
                    if d2 <= r * r {
                        data[(i, j)] = level;
                    }
                }
            }
        }
    }
    data.mapv_inplace(|v| v.clamp(0.0, 255.0));
    ImageGray::new(data).unwrap()
}

#[allow(dead_code)]
pub fn synthetic_shapes_dataset(n: usize, h: usize, w: usize, seed: u64) -> Vec<ImageGray> {
    (0..n)
        .map(|i| synthetic_shapes_image(h, w, seed.wrapping_add(i as u64)))
        .collect()
}

#[allow(dead_code)]
pub fn write_dataset(dir: &Path, images: &[ImageGray]) {
    std::fs::create_dir_all(dir).unwrap();
    for (i, img) in images.iter().enumerate() {
        save_image(img, &dir.join(format!("img{i:03}.pgm"))).unwrap();
    }
}
