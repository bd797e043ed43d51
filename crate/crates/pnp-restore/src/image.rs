//! Grayscale image type, PSNR, file I/O, patch extraction and augmentation.
//!
//! Intensities are stored as `f64` in nominal range [0, 255]; quantization
//! to 8 bits happens only when writing files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// 2-D grayscale intensity field, nominal range [0, 255].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageGray {
    data: Array2<f64>,
}

impl ImageGray {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        let (h, w) = data.dim();
        if h == 0 || w == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {h}x{w}"
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("non-finite pixel value".into()));
        }
        Ok(ImageGray { data })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        ImageGray::new(Array2::from_elem((height, width), value))
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    /// Clamp every pixel to [0, 255].
    pub fn clipped(&self) -> ImageGray {
        ImageGray {
            data: self.data.mapv(|v| v.clamp(0.0, 255.0)),
        }
    }

    /// Drop a border of `margin` pixels on every side.
    pub fn crop_border(&self, margin: usize) -> Result<ImageGray> {
        let (h, w) = self.data.dim();
        if 2 * margin >= h || 2 * margin >= w {
            return Err(Error::InvalidArgument(format!(
                "border {margin} too large for {h}x{w} image"
            )));
        }
        let view = self
            .data
            .slice(ndarray::s![margin..h - margin, margin..w - margin]);
        ImageGray::new(view.to_owned())
    }

    fn check_same_dims(&self, other: &ImageGray) -> Result<()> {
        if self.data.dim() != other.data.dim() {
            return Err(Error::shape(
                format!("{}x{}", self.height(), self.width()),
                format!("{}x{}", other.height(), other.width()),
            ));
        }
        Ok(())
    }
}

/// Square patch selection: side length plus the RNG seed for the offset draw.
#[derive(Debug, Clone, Copy)]
pub struct PatchSpec {
    pub size: usize,
    pub seed: u64,
}

/// Peak signal-to-noise ratio in dB with peak 255.
///
/// Returns `f64::INFINITY` when the two images are identical.
pub fn psnr(reference: &ImageGray, test: &ImageGray) -> Result<f64> {
    reference.check_same_dims(test)?;
    let n = (reference.height() * reference.width()) as f64;
    let mse = reference
        .data
        .iter()
        .zip(test.data.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

/// Contiguous square crop at a seed-determined uniform offset.
pub fn random_patch(img: &ImageGray, spec: &PatchSpec) -> Result<ImageGray> {
    let (h, w) = (img.height(), img.width());
    if spec.size == 0 || spec.size > h || spec.size > w {
        return Err(Error::InvalidArgument(format!(
            "patch size {} does not fit in {h}x{w} image",
            spec.size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let top = rng.gen_range(0..=h - spec.size);
    let left = rng.gen_range(0..=w - spec.size);
    let view = img
        .data
        .slice(ndarray::s![top..top + spec.size, left..left + spec.size]);
    ImageGray::new(view.to_owned())
}

/// One of the 8 dihedral-group isometries of the pixel grid.
///
/// Indices 0..=3 are counter-clockwise rotations by 0/90/180/270 degrees;
/// indices 4..=7 are the same rotations applied after a horizontal flip.
pub fn augment_dihedral(img: &ImageGray, index: u8) -> Result<ImageGray> {
    if index > 7 {
        return Err(Error::InvalidArgument(format!(
            "dihedral index {index} out of range 0..=7"
        )));
    }
    let base = if index >= 4 {
        flip_horizontal(&img.data)
    } else {
        img.data.clone()
    };
    let mut out = base;
    for _ in 0..(index % 4) {
        out = rot90(&out);
    }
    ImageGray::new(out)
}

fn rot90(a: &Array2<f64>) -> Array2<f64> {
    let (h, w) = a.dim();
    Array2::from_shape_fn((w, h), |(i, j)| a[(j, w - 1 - i)])
}

fn flip_horizontal(a: &Array2<f64>) -> Array2<f64> {
    let (h, w) = a.dim();
    Array2::from_shape_fn((h, w), |(i, j)| a[(i, w - 1 - j)])
}

/// Add i.i.d. zero-mean Gaussian noise of standard deviation `sigma`.
///
/// No clipping is applied here; range handling belongs to the consumer.
pub fn add_gaussian_noise(img: &ImageGray, sigma: f64, seed: u64) -> Result<ImageGray> {
    if sigma < 0.0 || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("invalid sigma {sigma}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = img.data.mapv(|v| {
        let n: f64 = rng.sample(StandardNormal);
        v + sigma * n
    });
    ImageGray::new(data)
}

// ---------------------------------------------------------------------------
// File I/O: binary PGM (P5, maxval 255) and 8-bit grayscale PNG.
// ---------------------------------------------------------------------------

pub fn load_image(path: &Path) -> Result<ImageGray> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "pgm" => load_pgm(path),
        "png" => load_png(path),
        other => Err(Error::ImageFormat {
            path: path.to_path_buf(),
            reason: format!("unsupported extension '{other}' (expected pgm or png)"),
        }),
    }
}

pub fn save_image(img: &ImageGray, path: &Path) -> Result<()> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "pgm" => save_pgm(img, path),
        "png" => save_png(img, path),
        other => Err(Error::ImageFormat {
            path: path.to_path_buf(),
            reason: format!("unsupported extension '{other}' (expected pgm or png)"),
        }),
    }
}

fn quantize(img: &ImageGray) -> Vec<u8> {
    img.data
        .iter()
        .map(|&v| v.round().clamp(0.0, 255.0) as u8)
        .collect()
}

struct PgmCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PgmCursor<'a> {
    /// Next header token, skipping whitespace and '#' comments.
    fn token(&mut self) -> Option<&'a [u8]> {
        let bytes = self.bytes;
        let mut i = self.pos;
        loop {
            while i < bytes.len() && bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            } else {
                break;
            }
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        self.pos = i;
        if start == i {
            None
        } else {
            Some(&bytes[start..i])
        }
    }

    fn int(&mut self) -> Option<usize> {
        let tok = self.token()?;
        std::str::from_utf8(tok).ok()?.parse().ok()
    }
}

fn load_pgm(path: &Path) -> Result<ImageGray> {
    let bytes = fs::read(path)?;
    let fmt_err = |reason: &str| Error::ImageFormat {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };

    let mut cur = PgmCursor {
        bytes: &bytes,
        pos: 0,
    };
    match cur.token() {
        Some(b"P5") => {}
        _ => return Err(fmt_err("not a binary PGM (magic != P5)")),
    }
    let width = cur.int().ok_or_else(|| fmt_err("malformed header"))?;
    let height = cur.int().ok_or_else(|| fmt_err("malformed header"))?;
    let maxval = cur.int().ok_or_else(|| fmt_err("malformed header"))?;
    if maxval != 255 {
        return Err(fmt_err(&format!(
            "unsupported bit depth (maxval {maxval}, expected 255)"
        )));
    }
    // exactly one whitespace byte separates header and raster
    let pos = cur.pos + 1;
    let expected = height * width;
    if bytes.len() < pos + expected {
        return Err(fmt_err("truncated pixel data"));
    }
    let raster = &bytes[pos..pos + expected];
    let data = Array2::from_shape_vec(
        (height, width),
        raster.iter().map(|&b| b as f64).collect(),
    )
    .map_err(|_| fmt_err("raster shape mismatch"))?;
    ImageGray::new(data)
}

fn save_pgm(img: &ImageGray, path: &Path) -> Result<()> {
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    write!(w, "P5\n{} {}\n255\n", img.width(), img.height())?;
    w.write_all(&quantize(img))?;
    Ok(())
}

fn load_png(path: &Path) -> Result<ImageGray> {
    let dyn_img = image::open(path).map_err(|e| Error::ImageFormat {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let gray = match dyn_img {
        image::DynamicImage::ImageLuma8(g) => g,
        other => {
            return Err(Error::ImageFormat {
                path: path.to_path_buf(),
                reason: format!(
                    "unsupported pixel layout {:?} (expected 8-bit grayscale)",
                    other.color()
                ),
            })
        }
    };
    let (w, h) = gray.dimensions();
    let data = Array2::from_shape_fn((h as usize, w as usize), |(i, j)| {
        gray.get_pixel(j as u32, i as u32)[0] as f64
    });
    ImageGray::new(data)
}

fn save_png(img: &ImageGray, path: &Path) -> Result<()> {
    let buf = image::GrayImage::from_raw(img.width() as u32, img.height() as u32, quantize(img))
        .expect("buffer length matches dimensions");
    buf.save(path).map_err(|e| Error::ImageFormat {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

// ---------------------------------------------------------------------------
// Dataset discovery
// ---------------------------------------------------------------------------

/// List image files in a directory, sorted lexicographically by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", dir.display())));
    }
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .map(|e| {
                    let e = e.to_ascii_lowercase();
                    e == "pgm" || e == "png"
                })
                .unwrap_or(false)
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Load every image in a directory, in lexicographic order.
pub fn load_dataset(dir: &Path) -> Result<Vec<ImageGray>> {
    let paths = list_images(dir)?;
    if paths.is_empty() {
        return Err(Error::Dataset(format!(
            "no .pgm or .png images in {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| load_image(p)).collect()
}
