//! Degradation operators (circular blur, blur + decimation) and the
//! quadratic-penalty data-consistency solvers used inside the restoration loop.

use std::path::Path;

use ndarray::Array2;
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::fft2::{fft2, ifft2, real_part, to_complex};
use crate::image::{add_gaussian_noise, ImageGray};

/// Odd-sized nonnegative convolution kernel normalized to unit sum.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    weights: Array2<f64>,
}

impl Kernel {
    /// Validate a kernel: square, odd side, nonnegative, sum 1 within 1e-12.
    pub fn new(weights: Array2<f64>) -> Result<Self> {
        let (h, w) = weights.dim();
        if h != w {
            return Err(Error::InvalidArgument(format!(
                "kernel must be square, got {h}x{w}"
            )));
        }
        if h % 2 == 0 || h == 0 {
            return Err(Error::InvalidArgument(format!(
                "kernel side must be odd and positive, got {h}"
            )));
        }
        if !weights.iter().all(|v| v.is_finite() && *v >= 0.0) {
            return Err(Error::InvalidArgument(
                "kernel weights must be finite and nonnegative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidArgument(format!(
                "kernel weights must sum to 1 (got {sum})"
            )));
        }
        Ok(Kernel { weights })
    }

    /// Normalize arbitrary nonnegative weights to unit sum, then validate.
    pub fn normalized(weights: Array2<f64>) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum > 0.0) {
            return Err(Error::InvalidArgument(
                "kernel weights must have positive sum".into(),
            ));
        }
        let mut w = weights / sum;
        // one renormalization pass keeps the sum at 1 to machine precision
        let s2: f64 = w.iter().sum();
        w /= s2;
        Kernel::new(w)
    }

    /// Dirac kernel: identity under circular convolution.
    pub fn delta(size: usize) -> Result<Self> {
        let mut w = Array2::zeros((size, size));
        w[(size / 2, size / 2)] = 1.0;
        Kernel::new(w)
    }

    pub fn size(&self) -> usize {
        self.weights.nrows()
    }

    pub fn radius(&self) -> usize {
        self.size() / 2
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    /// 180-degree rotation; convolution with it is the adjoint operator.
    pub fn flipped(&self) -> Kernel {
        let n = self.size();
        Kernel {
            weights: Array2::from_shape_fn((n, n), |(i, j)| {
                self.weights[(n - 1 - i, n - 1 - j)]
            }),
        }
    }

    /// DFT of the kernel zero-padded to `h` x `w` with its center at the
    /// origin, so that a delta kernel has a flat unit spectrum.
    pub fn spectrum(&self, h: usize, w: usize) -> Result<Array2<Complex<f64>>> {
        let n = self.size();
        if n > h || n > w {
            return Err(Error::InvalidArgument(format!(
                "kernel {n}x{n} larger than image {h}x{w}"
            )));
        }
        let c = self.radius() as isize;
        let mut padded = Array2::zeros((h, w));
        for ((i, j), &v) in self.weights.indexed_iter() {
            let ii = (i as isize - c).rem_euclid(h as isize) as usize;
            let jj = (j as isize - c).rem_euclid(w as isize) as usize;
            padded[(ii, jj)] += v;
        }
        Ok(fft2(&to_complex(&padded)))
    }

    /// Load a kernel from a plain-text file: two integers (rows cols) then
    /// row-major float weights, whitespace separated. Weights are normalized.
    pub fn load_text(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut toks = text.split_whitespace();
        let parse_dim = |t: Option<&str>| -> Result<usize> {
            t.and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::InvalidArgument("malformed kernel header".into()))
        };
        let rows = parse_dim(toks.next())?;
        let cols = parse_dim(toks.next())?;
        let vals: Vec<f64> = toks
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::InvalidArgument(format!("bad kernel weight '{t}'")))
            })
            .collect::<Result<_>>()?;
        if vals.len() != rows * cols {
            return Err(Error::InvalidArgument(format!(
                "kernel file holds {} weights, header says {}x{}",
                vals.len(),
                rows,
                cols
            )));
        }
        let w = Array2::from_shape_vec((rows, cols), vals)
            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
        Kernel::normalized(w)
    }
}

/// Isotropic Gaussian kernel of odd side `size` and standard deviation `sigma`.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Kernel> {
    if size % 2 == 0 || size == 0 {
        return Err(Error::InvalidArgument(format!(
            "kernel size must be odd, got {size}"
        )));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let c = (size / 2) as f64;
    let w = Array2::from_shape_fn((size, size), |(i, j)| {
        let di = i as f64 - c;
        let dj = j as f64 - c;
        (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp()
    });
    Kernel::normalized(w)
}

/// Periodic-boundary 2-D convolution realized as a pointwise spectral product.
pub fn circular_convolve(img: &ImageGray, kernel: &Kernel) -> Result<ImageGray> {
    let (h, w) = (img.height(), img.width());
    let k_hat = kernel.spectrum(h, w)?;
    let x_hat = fft2(&to_complex(img.data()));
    let out = ifft2(&(x_hat * &k_hat));
    ImageGray::new(real_part(&out))
}

/// Which forward operator degrades the measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DegradationKind {
    Deblur,
    Sisr,
}

/// Full degradation description: blur kernel, subsampling step, noise level.
#[derive(Debug, Clone)]
pub struct Degradation {
    pub kind: DegradationKind,
    pub kernel: Kernel,
    pub factor: usize,
    pub noise_sigma: f64,
}

impl Degradation {
    pub fn deblur(kernel: Kernel, noise_sigma: f64) -> Result<Self> {
        if noise_sigma < 0.0 {
            return Err(Error::InvalidArgument("noise sigma must be >= 0".into()));
        }
        Ok(Degradation {
            kind: DegradationKind::Deblur,
            kernel,
            factor: 1,
            noise_sigma,
        })
    }

    pub fn sisr(kernel: Kernel, factor: usize, noise_sigma: f64) -> Result<Self> {
        if factor < 2 {
            return Err(Error::InvalidArgument(
                "subsampling factor must be >= 2".into(),
            ));
        }
        if noise_sigma < 0.0 {
            return Err(Error::InvalidArgument("noise sigma must be >= 0".into()));
        }
        Ok(Degradation {
            kind: DegradationKind::Sisr,
            kernel,
            factor,
            noise_sigma,
        })
    }
}

/// Keep every `factor`-th pixel in each dimension, starting at offset 0.
pub fn subsample(img: &ImageGray, factor: usize) -> Result<ImageGray> {
    let (h, w) = (img.height(), img.width());
    if h % factor != 0 || w % factor != 0 {
        return Err(Error::InvalidArgument(format!(
            "dimensions {h}x{w} not divisible by factor {factor}"
        )));
    }
    let data = Array2::from_shape_fn((h / factor, w / factor), |(i, j)| {
        img.data()[(i * factor, j * factor)]
    });
    ImageGray::new(data)
}

/// Adjoint of `subsample`: insert zeros between samples.
pub fn upsample_zero(data: &Array2<f64>, factor: usize) -> Array2<f64> {
    let (h, w) = data.dim();
    let mut out = Array2::zeros((h * factor, w * factor));
    for ((i, j), &v) in data.indexed_iter() {
        out[(i * factor, j * factor)] = v;
    }
    out
}

/// Zero-order-hold upsampling, used to initialize super-resolution runs.
pub fn upsample_nearest(img: &ImageGray, factor: usize) -> Result<ImageGray> {
    let (h, w) = (img.height(), img.width());
    let data = Array2::from_shape_fn((h * factor, w * factor), |(i, j)| {
        img.data()[(i / factor, j / factor)]
    });
    ImageGray::new(data)
}

/// Apply the forward model y = Hx + n.
pub fn degrade(x: &ImageGray, d: &Degradation, seed: u64) -> Result<ImageGray> {
    let blurred = circular_convolve(x, &d.kernel)?;
    let measured = match d.kind {
        DegradationKind::Deblur => blurred,
        DegradationKind::Sisr => subsample(&blurred, d.factor)?,
    };
    add_gaussian_noise(&measured, d.noise_sigma, seed)
}

// ---------------------------------------------------------------------------
// Data-consistency solvers
// ---------------------------------------------------------------------------

/// Exact spectral minimizer of ||Hx - y||^2 + mu * ||x - z||^2 for circulant H.
///
/// Per frequency: X = (conj(K) * Y + mu * Z) / (|K|^2 + mu).
pub fn deblur_data_consistency(
    y: &ImageGray,
    kernel: &Kernel,
    z: &ImageGray,
    mu: f64,
) -> Result<ImageGray> {
    let solver = DeblurSolver::new(y, kernel, mu)?;
    solver.solve(z)
}

/// Deblur x-update with the kernel spectrum and measurement spectrum cached,
/// so repeated solves against the same (y, kernel, image size) only transform z.
pub struct DeblurSolver {
    numerator_fixed: Array2<Complex<f64>>, // conj(K) * Y
    denom: Array2<f64>,                    // |K|^2 + mu
    mu: f64,
    dims: (usize, usize),
}

impl DeblurSolver {
    pub fn new(y: &ImageGray, kernel: &Kernel, mu: f64) -> Result<Self> {
        if !(mu > 0.0) {
            return Err(Error::InvalidArgument(format!("mu must be > 0, got {mu}")));
        }
        let (h, w) = (y.height(), y.width());
        let k_hat = kernel.spectrum(h, w)?;
        let y_hat = fft2(&to_complex(y.data()));
        let numerator_fixed = ndarray::Zip::from(&k_hat)
            .and(&y_hat)
            .map_collect(|k, yv| k.conj() * yv);
        let denom = k_hat.mapv(|k| k.norm_sqr() + mu);
        Ok(DeblurSolver {
            numerator_fixed,
            denom,
            mu,
            dims: (h, w),
        })
    }

    /// Penalty weight can change between iterations; rebuild only the denominator.
    pub fn with_mu(&self, mu: f64) -> Result<DeblurSolver> {
        if !(mu > 0.0) {
            return Err(Error::InvalidArgument(format!("mu must be > 0, got {mu}")));
        }
        Ok(DeblurSolver {
            numerator_fixed: self.numerator_fixed.clone(),
            denom: self.denom.mapv(|d| d - self.mu + mu),
            mu,
            dims: self.dims,
        })
    }

    pub fn solve(&self, z: &ImageGray) -> Result<ImageGray> {
        if (z.height(), z.width()) != self.dims {
            return Err(Error::shape(
                format!("{}x{}", self.dims.0, self.dims.1),
                format!("{}x{}", z.height(), z.width()),
            ));
        }
        let z_hat = fft2(&to_complex(z.data()));
        let x_hat = ndarray::Zip::from(&self.numerator_fixed)
            .and(&z_hat)
            .and(&self.denom)
            .map_collect(|num, zv, d| (num + zv * self.mu) / d);
        ImageGray::new(real_part(&ifft2(&x_hat)))
    }
}

/// Conjugate-gradient termination parameters.
#[derive(Debug, Clone, Copy)]
pub struct CgConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CgConfig {
    fn default() -> Self {
        CgConfig {
            tol: 1e-6,
            max_iter: 100,
        }
    }
}

/// Outcome of a conjugate-gradient solve.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Array2<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Matrix-free conjugate gradients for a symmetric positive-definite operator.
///
/// Terminates when ||Ax - b|| / ||b|| <= tol or after `max_iter` iterations;
/// reports breakdown when a search direction has non-positive curvature.
pub fn conjugate_gradient<F>(apply_a: F, b: &Array2<f64>, cfg: &CgConfig) -> Result<CgOutcome>
where
    F: Fn(&Array2<f64>) -> Array2<f64>,
{
    if !(cfg.tol > 0.0) {
        return Err(Error::InvalidArgument("CG tolerance must be > 0".into()));
    }
    let dot = |a: &Array2<f64>, b: &Array2<f64>| -> f64 {
        a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
    };
    let b_norm = dot(b, b).sqrt();
    if b_norm == 0.0 {
        return Ok(CgOutcome {
            x: Array2::zeros(b.dim()),
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        });
    }
    let mut x = Array2::zeros(b.dim());
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = dot(&r, &r);
    let mut iterations = 0;
    while iterations < cfg.max_iter {
        if rs.sqrt() / b_norm <= cfg.tol {
            break;
        }
        let ap = apply_a(&p);
        let curvature = dot(&p, &ap);
        if curvature <= 0.0 {
            return Err(Error::Numerical(format!(
                "CG breakdown: non-positive curvature {curvature} (operator not SPD)"
            )));
        }
        let alpha = rs / curvature;
        x = x + alpha * &p;
        r = r - alpha * &ap;
        let rs_new = dot(&r, &r);
        p = &r + (rs_new / rs) * &p;
        rs = rs_new;
        iterations += 1;
    }
    let relative_residual = rs.sqrt() / b_norm;
    Ok(CgOutcome {
        x,
        iterations,
        relative_residual,
        converged: relative_residual <= cfg.tol,
    })
}

/// Super-resolution x-update: solve (G^T S^T S G + mu I) x = G^T S^T y + mu z
/// by matrix-free conjugate gradients, with the kernel and its adjoint applied
/// spectrally. `factor = 1` degenerates to plain deblurring.
pub fn sisr_data_consistency(
    y: &ImageGray,
    kernel: &Kernel,
    factor: usize,
    z: &ImageGray,
    mu: f64,
    cg: &CgConfig,
) -> Result<ImageGray> {
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!("mu must be > 0, got {mu}")));
    }
    if factor == 0 {
        return Err(Error::InvalidArgument("factor must be >= 1".into()));
    }
    let (zh, zw) = (z.height(), z.width());
    if zh != y.height() * factor || zw != y.width() * factor {
        return Err(Error::shape(
            format!("{}x{}", y.height() * factor, y.width() * factor),
            format!("{zh}x{zw}"),
        ));
    }
    let k_hat = kernel.spectrum(zh, zw)?;
    let k_hat_conj = k_hat.mapv(|v| v.conj());
    let conv = |data: &Array2<f64>, spec: &Array2<Complex<f64>>| -> Array2<f64> {
        real_part(&ifft2(&(fft2(&to_complex(data)) * spec)))
    };
    let sample = |data: &Array2<f64>| -> Array2<f64> {
        Array2::from_shape_fn((zh / factor, zw / factor), |(i, j)| {
            data[(i * factor, j * factor)]
        })
    };

    // right-hand side: G^T S^T y + mu z
    let gt_st_y = conv(&upsample_zero(y.data(), factor), &k_hat_conj);
    let b = &gt_st_y + &(mu * z.data());

    let apply_a = |x: &Array2<f64>| -> Array2<f64> {
        let gx = conv(x, &k_hat);
        let sgx = sample(&gx);
        let gt_st_sgx = conv(&upsample_zero(&sgx, factor), &k_hat_conj);
        gt_st_sgx + mu * x
    };

    let outcome = conjugate_gradient(apply_a, &b, cg)?;
    if !outcome.converged {
        return Err(Error::Numerical(format!(
            "CG did not converge in {} iterations (relative residual {:.3e})",
            outcome.iterations, outcome.relative_residual
        )));
    }
    ImageGray::new(outcome.x)
}
