//! Half-quadratic-splitting restoration loop: alternate a data-consistency
//! solve against the assumed degradation with a denoiser prior step, under a
//! geometrically decaying noise-level schedule.

use crate::error::{Error, Result};
use crate::forward::{
    degrade, gaussian_kernel, sisr_data_consistency, CgConfig, DeblurSolver, Degradation,
    DegradationKind,
};
use crate::image::{psnr, ImageGray};

/// Geometric interpolation between the schedule endpoints:
/// sigma_k = start * (end/start)^(k/(K-1)).
pub fn sigma_schedule(k: usize, total: usize, sigma_start: f64, sigma_end: f64) -> Result<f64> {
    if total < 2 {
        return Err(Error::InvalidArgument("schedule needs K >= 2".into()));
    }
    if !(sigma_end > 0.0 && sigma_end < sigma_start) {
        return Err(Error::InvalidArgument(format!(
            "schedule endpoints must satisfy 0 < end < start, got {sigma_start} -> {sigma_end}"
        )));
    }
    if k >= total {
        return Err(Error::InvalidArgument(format!(
            "iteration {k} out of range 0..{total}"
        )));
    }
    // pin the endpoints so they are exact, not powf-rounded
    if k == 0 {
        return Ok(sigma_start);
    }
    if k == total - 1 {
        return Ok(sigma_end);
    }
    let t = k as f64 / (total - 1) as f64;
    Ok(sigma_start * (sigma_end / sigma_start).powf(t))
}

/// Schedule floor: a zero-noise measurement still needs a positive endpoint.
pub const SIGMA_END_FLOOR: f64 = 1.0;

/// Default regularization weight, tied to the final effective noise level.
pub fn default_lambda(kind: DegradationKind, noise_sigma: f64) -> f64 {
    let sigma_end = match kind {
        DegradationKind::Deblur => noise_sigma.max(SIGMA_END_FLOOR),
        DegradationKind::Sisr => noise_sigma.max(SIGMA_END_FLOOR),
    };
    0.23 * sigma_end * sigma_end
}

/// Solver-side configuration. `degradation_est` is the model assumed inside
/// the loop and may deviate from the true degradation.
#[derive(Debug, Clone)]
pub struct PnPConfig {
    pub iterations: usize,
    pub sigma_start: f64,
    pub sigma_end: f64,
    pub lambda: f64,
    pub degradation_est: Degradation,
    pub cg: CgConfig,
}

impl PnPConfig {
    /// Standard setup: schedule from 50 down to the (floored) noise level,
    /// lambda from the default rule.
    pub fn standard(degradation_est: Degradation, iterations: usize) -> Self {
        let sigma_end = degradation_est.noise_sigma.max(SIGMA_END_FLOOR);
        let lambda = default_lambda(degradation_est.kind, degradation_est.noise_sigma);
        PnPConfig {
            iterations,
            sigma_start: 50.0,
            sigma_end,
            lambda,
            degradation_est,
            cg: CgConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be >= 1".into()));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidArgument("lambda must be > 0".into()));
        }
        if self.iterations >= 2 && !(self.sigma_end > 0.0 && self.sigma_end < self.sigma_start) {
            return Err(Error::InvalidArgument(
                "sigma schedule endpoints must satisfy 0 < end < start".into(),
            ));
        }
        Ok(())
    }

    fn sigma_at(&self, k: usize) -> Result<f64> {
        if self.iterations == 1 {
            Ok(self.sigma_start)
        } else {
            sigma_schedule(k, self.iterations, self.sigma_start, self.sigma_end)
        }
    }
}

/// Per-iteration record.
#[derive(Debug, Clone)]
pub struct TraceEntry {
    pub iteration: usize,
    pub sigma: f64,
    pub mu: f64,
    /// PSNR of the iterate against the ground truth, when one was supplied.
    pub psnr: Option<f64>,
}

/// Denoiser prior callback: maps (current iterate, effective sigma) to the
/// denoised auxiliary variable.
pub type Prior<'a> = dyn Fn(&ImageGray, f64) -> Result<ImageGray> + 'a;

/// Run the splitting loop: x-step is the exact spectral solve for deblurring
/// and a conjugate-gradient solve for super-resolution; z-step is the prior.
pub fn run_pnp(
    y: &ImageGray,
    cfg: &PnPConfig,
    prior: &Prior,
    init: Option<ImageGray>,
    ground_truth: Option<&ImageGray>,
) -> Result<(ImageGray, Vec<TraceEntry>)> {
    cfg.validate()?;
    let d = &cfg.degradation_est;
    let mut z = match init {
        Some(z0) => z0,
        None => match d.kind {
            DegradationKind::Deblur => y.clone(),
            DegradationKind::Sisr => crate::forward::upsample_nearest(y, d.factor)?,
        },
    };
    let target_dims = (y.height() * d.factor, y.width() * d.factor);
    if (z.height(), z.width()) != target_dims {
        return Err(Error::shape(
            format!("{}x{}", target_dims.0, target_dims.1),
            format!("{}x{}", z.height(), z.width()),
        ));
    }

    // kernel and measurement spectra are fixed for the whole run
    let deblur_solver = match d.kind {
        DegradationKind::Deblur => Some(DeblurSolver::new(y, &d.kernel, 1.0)?),
        DegradationKind::Sisr => None,
    };

    let mut trace = Vec::with_capacity(cfg.iterations);
    for k in 0..cfg.iterations {
        let sigma = cfg.sigma_at(k)?;
        let mu = cfg.lambda / (sigma * sigma);
        let x = match d.kind {
            DegradationKind::Deblur => deblur_solver.as_ref().unwrap().with_mu(mu)?.solve(&z)?,
            DegradationKind::Sisr => {
                sisr_data_consistency(y, &d.kernel, d.factor, &z, mu, &cfg.cg)?
            }
        };
        if !x.data().iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite iterate at iteration {k}")));
        }
        z = prior(&x, sigma)?;
        trace.push(TraceEntry {
            iteration: k,
            sigma,
            mu,
            psnr: match ground_truth {
                Some(gt) => Some(psnr(gt, &z)?),
                None => None,
            },
        });
    }
    Ok((z, trace))
}

/// One row of a kernel-mismatch sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub sigma_est: f64,
    pub mean_psnr: f64,
    pub std_psnr: f64,
    pub n_images: usize,
}

/// Sweep-level knobs shared across all estimated kernels.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub iterations: usize,
    pub sigma_start: f64,
    /// None selects the default lambda rule.
    pub lambda: Option<f64>,
    pub cg: CgConfig,
    /// Base seed for the measurement noise; each image gets a distinct seed.
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            iterations: 30,
            sigma_start: 50.0,
            lambda: None,
            cg: CgConfig::default(),
            seed: 0,
        }
    }
}

/// Center-crop so that both dimensions are divisible by `factor`.
pub fn center_crop_divisible(img: &ImageGray, factor: usize) -> Result<ImageGray> {
    let (h, w) = (img.height(), img.width());
    let (nh, nw) = (h - h % factor, w - w % factor);
    if nh == 0 || nw == 0 {
        return Err(Error::InvalidArgument(format!(
            "image {h}x{w} too small for factor {factor}"
        )));
    }
    if (nh, nw) == (h, w) {
        return Ok(img.clone());
    }
    let (top, left) = ((h - nh) / 2, (w - nw) / 2);
    ImageGray::new(
        img.data()
            .slice(ndarray::s![top..top + nh, left..left + nw])
            .to_owned(),
    )
}

/// Result of one degrade-then-restore round trip. PSNRs exclude a border of
/// kernel-radius pixels; the baseline is the degraded measurement itself
/// (nearest-upsampled for super-resolution).
#[derive(Debug, Clone)]
pub struct RestoreOutcome {
    pub baseline_psnr: f64,
    pub restored_psnr: f64,
    pub restored: ImageGray,
}

/// Degrade with the true model, restore with a kernel built from `sigma_est`.
pub fn restore_with_estimate(
    clean: &ImageGray,
    true_deg: &Degradation,
    sigma_est: f64,
    cfg: &SweepConfig,
    prior: &Prior,
    seed: u64,
) -> Result<RestoreOutcome> {
    let clean = center_crop_divisible(clean, true_deg.factor)?;
    let y = degrade(&clean, true_deg, seed)?;
    let est_kernel = gaussian_kernel(true_deg.kernel.size(), sigma_est)?;
    let degradation_est = Degradation {
        kind: true_deg.kind,
        kernel: est_kernel,
        factor: true_deg.factor,
        noise_sigma: true_deg.noise_sigma,
    };
    let sigma_end = true_deg.noise_sigma.max(SIGMA_END_FLOOR);
    let pnp_cfg = PnPConfig {
        iterations: cfg.iterations,
        sigma_start: cfg.sigma_start,
        sigma_end,
        lambda: cfg
            .lambda
            .unwrap_or_else(|| default_lambda(true_deg.kind, true_deg.noise_sigma)),
        degradation_est,
        cg: cfg.cg,
    };
    let (restored, _) = run_pnp(&y, &pnp_cfg, prior, None, None)?;
    let margin = true_deg.kernel.radius();
    let crop_ref = clean.crop_border(margin)?;
    let restored_psnr = psnr(&crop_ref, &restored.crop_border(margin)?)?;
    let baseline = match true_deg.kind {
        DegradationKind::Deblur => psnr(&crop_ref, &y.crop_border(margin)?)?,
        DegradationKind::Sisr => {
            let up = crate::forward::upsample_nearest(&y, true_deg.factor)?;
            psnr(&crop_ref, &up.crop_border(margin)?)?
        }
    };
    Ok(RestoreOutcome {
        baseline_psnr: baseline,
        restored_psnr,
        restored,
    })
}

/// For each estimated kernel width, degrade every clean image with the true
/// model and restore with the mismatched one; report mean/std PSNR per row.
pub fn robustness_sweep(
    clean_set: &[ImageGray],
    true_deg: &Degradation,
    est_sigmas: &[f64],
    cfg: &SweepConfig,
    prior: &Prior,
) -> Result<Vec<SweepRow>> {
    if clean_set.is_empty() {
        return Err(Error::Dataset("empty evaluation set".into()));
    }
    if est_sigmas.is_empty() {
        return Err(Error::InvalidArgument("no estimated sigmas given".into()));
    }
    let mut rows = Vec::with_capacity(est_sigmas.len());
    for &sigma_est in est_sigmas {
        let mut values = Vec::with_capacity(clean_set.len());
        for (i, clean) in clean_set.iter().enumerate() {
            let outcome =
                restore_with_estimate(clean, true_deg, sigma_est, cfg, prior, cfg.seed ^ i as u64)?;
            values.push(outcome.restored_psnr);
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        rows.push(SweepRow {
            sigma_est,
            mean_psnr: mean,
            std_psnr: var.sqrt(),
            n_images: values.len(),
        });
    }
    Ok(rows)
}
