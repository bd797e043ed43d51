//! Command-line entry point tying the denoiser, the restoration loop, and
//! the experiment plumbing into reproducible runs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::{Parser, Subcommand};

use pnp_restore::config::ExperimentConfig;
use pnp_restore::denoiser::{denoise_greedy, denoiser_as_prior, EpisodeConfig};
use pnp_restore::forward::Degradation;
use pnp_restore::image::{list_images, load_image, psnr, save_image, ImageGray};
use pnp_restore::nn::{load_checkpoint, save_checkpoint, PolicyValueNet};
use pnp_restore::pnp::{restore_with_estimate, RestoreOutcome, SweepConfig, SweepRow};
use pnp_restore::ppo::{train, TrainOptions};
use pnp_restore::{Error, Result};

#[derive(Parser)]
#[command(
    name = "pnp-restore",
    about = "Reinforcement-learned denoising prior plugged into an image restoration loop"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the pixel-wise policy/value denoiser and write a checkpoint.
    TrainDenoiser {
        /// Experiment config file (TOML sections; unknown keys are errors)
        #[arg(long)]
        config: PathBuf,
    },
    /// Denoise one image with a trained checkpoint.
    Denoise {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Number of greedy refinement steps
        #[arg(long, default_value_t = 5)]
        steps: usize,
        /// Clean reference; when given, input/output PSNR lines are printed
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Blur+noise each evaluation image, restore it, and report PSNR.
    Deblur {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Blur+subsample+noise each evaluation image, restore it, report PSNR.
    Sisr {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Kernel-mismatch robustness sweep; one CSV per degradation setting.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Fail (exit 4) if mean PSNR is not strictly decreasing in sigma_est
        #[arg(long)]
        assert_trend: bool,
    },
    /// Print the PSNR between two images.
    Psnr {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        image: PathBuf,
    },
    /// Check that a dataset directory has enough loadable images.
    VerifyDataset {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        min_count: usize,
        /// Minimum height and width of every image
        #[arg(long, default_value_t = 1)]
        min_size: usize,
    },
}

fn exit_code_for(err: &Error) -> ExitCode {
    let code = match err {
        Error::Config(_) | Error::InvalidArgument(_) => 1,
        Error::Dataset(_) | Error::ImageFormat { .. } | Error::Io(_) | Error::Checkpoint(_) => 2,
        Error::Numerical(_) | Error::ShapeMismatch { .. } => 3,
    };
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are success, anything else is usage error
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code_for(&e)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::TrainDenoiser { config } => cmd_train_denoiser(&config),
        Command::Denoise {
            checkpoint,
            input,
            output,
            steps,
            reference,
        } => cmd_denoise(&checkpoint, &input, &output, steps, reference.as_deref()),
        Command::Deblur { config, checkpoint } => cmd_restore(&config, &checkpoint, "deblur"),
        Command::Sisr { config, checkpoint } => cmd_restore(&config, &checkpoint, "sisr"),
        Command::Sweep {
            config,
            checkpoint,
            assert_trend,
        } => cmd_sweep(&config, &checkpoint, assert_trend),
        Command::Psnr { reference, image } => cmd_psnr(&reference, &image),
        Command::VerifyDataset {
            dir,
            min_count,
            min_size,
        } => cmd_verify_dataset(&dir, min_count, min_size),
    }
}

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

/// Ordered parallel map: work is distributed over `jobs` threads but results
/// come back in input order, so aggregation is deterministic.
fn parallel_map<T, U, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(usize, &T) -> Result<U> + Sync,
{
    let jobs = if jobs == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        jobs
    };
    let jobs = jobs.min(items.len()).max(1);
    if jobs == 1 {
        return items.iter().enumerate().map(|(i, t)| f(i, t)).collect();
    }
    let next = AtomicUsize::new(0);
    let mut slots: Vec<Option<Result<U>>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..jobs)
            .map(|_| {
                scope.spawn(|| {
                    let mut local = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= items.len() {
                            break;
                        }
                        local.push((i, f(i, &items[i])));
                    }
                    local
                })
            })
            .collect();
        for handle in handles {
            for (i, r) in handle.join().expect("worker panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|s| s.expect("slot filled")).collect()
}

/// Write a CSV with '.' decimals and LF line endings.
fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut text = String::with_capacity(rows.len() * 32 + header.len() + 1);
    text.push_str(header);
    text.push('\n');
    for row in rows {
        text.push_str(row);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn prepare_output_dir(cfg: &ExperimentConfig, config_path: &Path) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.run.output_dir);
    std::fs::create_dir_all(&dir)?;
    let name = config_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("config");
    cfg.write_resolved(&dir.join(format!("{name}.resolved.toml")))?;
    Ok(dir)
}

fn load_eval_set(cfg: &ExperimentConfig) -> Result<(Vec<String>, Vec<ImageGray>)> {
    let dir = PathBuf::from(&cfg.dataset.eval_dir);
    let paths = list_images(&dir)?;
    if paths.is_empty() {
        return Err(Error::Dataset(format!("no images in {}", dir.display())));
    }
    let names = paths
        .iter()
        .map(|p| {
            p.file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("image")
                .to_string()
        })
        .collect();
    let images = paths.iter().map(|p| load_image(p)).collect::<Result<_>>()?;
    Ok((names, images))
}

fn sweep_config(cfg: &ExperimentConfig) -> SweepConfig {
    SweepConfig {
        iterations: cfg.pnp.iterations,
        sigma_start: cfg.pnp.sigma_start,
        lambda: cfg.pnp.lambda,
        cg: cfg.cg_config(),
        seed: cfg.run.seed,
    }
}

/// Restore every image of the set against one true degradation / estimated
/// sigma pair; ordered, optionally parallel over images.
fn restore_set(
    images: &[ImageGray],
    true_deg: &Degradation,
    sigma_est: f64,
    swp: &SweepConfig,
    net: &PolicyValueNet,
    episode: &EpisodeConfig,
    sigma_train: f64,
    jobs: usize,
) -> Result<Vec<RestoreOutcome>> {
    parallel_map(images, jobs, |i, clean| {
        let prior = |x: &ImageGray, sigma: f64| denoiser_as_prior(net, x, sigma, sigma_train, episode);
        restore_with_estimate(clean, true_deg, sigma_est, swp, &prior, swp.seed ^ i as u64)
    })
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_train_denoiser(config_path: &Path) -> Result<ExitCode> {
    let cfg = ExperimentConfig::load(config_path)?;
    let out_dir = prepare_output_dir(&cfg, config_path)?;
    let train_set = pnp_restore::image::load_dataset(Path::new(&cfg.dataset.train_dir))?;
    let holdout = match &cfg.dataset.holdout_dir {
        Some(dir) => pnp_restore::image::load_dataset(Path::new(dir))?,
        None => train_set.clone(),
    };
    let mut net = PolicyValueNet::new(cfg.net_config(), cfg.run.seed)?;
    let opts = TrainOptions {
        patch_size: cfg.ppo.patch_size,
        seed: cfg.run.seed,
    };
    let metrics = train(
        &train_set,
        &holdout,
        &mut net,
        &cfg.ppo_config(),
        &cfg.episode_config(),
        &opts,
        |m, _| {
            println!(
                "epoch {} mean_reward {} entropy {} value_loss {} holdout_psnr {}",
                m.epoch, m.mean_reward, m.entropy, m.value_loss, m.holdout_psnr
            );
            Ok(())
        },
    )?;
    let rows: Vec<String> = metrics
        .iter()
        .map(|m| {
            format!(
                "{},{},{},{},{}",
                m.epoch, m.mean_reward, m.entropy, m.value_loss, m.holdout_psnr
            )
        })
        .collect();
    write_csv(
        &out_dir.join("metrics.csv"),
        "epoch,mean_reward,entropy,value_loss,holdout_psnr",
        &rows,
    )?;
    let final_psnr = metrics.last().map(|m| m.holdout_psnr).unwrap_or(f64::NAN);
    save_checkpoint(
        &net,
        &out_dir.join("denoiser.ckpt"),
        &serde_json::json!({
            "epochs": cfg.ppo.total_epochs,
            "seed": cfg.run.seed,
            "sigma_train": cfg.ppo.sigma_train,
            "holdout_psnr": final_psnr,
        }),
    )?;
    println!("checkpoint {}", out_dir.join("denoiser.ckpt").display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_denoise(
    checkpoint: &Path,
    input: &Path,
    output: &Path,
    steps: usize,
    reference: Option<&Path>,
) -> Result<ExitCode> {
    let net = load_checkpoint(checkpoint)?;
    let img = load_image(input)?;
    let episode = EpisodeConfig {
        steps,
        ..EpisodeConfig::default()
    };
    let denoised = denoise_greedy(&net, &img, &episode)?;
    save_image(&denoised, output)?;
    if let Some(ref_path) = reference {
        let clean = load_image(ref_path)?;
        println!("psnr_input {}", psnr(&clean, &img)?);
        println!("psnr_output {}", psnr(&clean, &denoised)?);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_restore(config_path: &Path, checkpoint: &Path, kind: &str) -> Result<ExitCode> {
    let mut cfg = ExperimentConfig::load(config_path)?;
    cfg.degradation.kind = kind.to_string();
    let out_dir = prepare_output_dir(&cfg, config_path)?;
    let net = load_checkpoint(checkpoint)?;
    let (names, images) = load_eval_set(&cfg)?;
    let true_deg = cfg.true_degradation()?;
    let sigma_est = cfg.degradation.sigma_est.unwrap_or(cfg.degradation.sigma_blur);
    let swp = sweep_config(&cfg);
    let episode = cfg.episode_config();
    let outcomes = restore_set(
        &images,
        &true_deg,
        sigma_est,
        &swp,
        &net,
        &episode,
        cfg.ppo.sigma_train,
        cfg.run.jobs,
    )?;
    let mut rows = Vec::with_capacity(outcomes.len() + 1);
    for (name, o) in names.iter().zip(&outcomes) {
        save_image(
            &o.restored.clipped(),
            &out_dir.join(format!("{name}_restored.png")),
        )?;
        rows.push(format!("{},{},{}", name, o.baseline_psnr, o.restored_psnr));
    }
    let (mean_base, _) = mean_std(&outcomes.iter().map(|o| o.baseline_psnr).collect::<Vec<_>>());
    let (mean_rest, _) = mean_std(&outcomes.iter().map(|o| o.restored_psnr).collect::<Vec<_>>());
    rows.push(format!("mean,{mean_base},{mean_rest}"));
    let csv = out_dir.join(format!("{kind}_psnr.csv"));
    write_csv(&csv, "image,psnr_degraded,psnr_restored", &rows)?;
    println!("mean_psnr_degraded {mean_base}");
    println!("mean_psnr_restored {mean_rest}");
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(config_path: &Path, checkpoint: &Path, assert_trend_flag: bool) -> Result<ExitCode> {
    let cfg = ExperimentConfig::load(config_path)?;
    let out_dir = prepare_output_dir(&cfg, config_path)?;
    let net = load_checkpoint(checkpoint)?;
    let (_, images) = load_eval_set(&cfg)?;
    let assert_trend = assert_trend_flag || cfg.sweep.assert_trend;
    if cfg.sweep.est_sigmas.is_empty() {
        return Err(Error::Config("sweep.est_sigmas is empty".into()));
    }
    let swp = sweep_config(&cfg);
    let episode = cfg.episode_config();

    // deblur sweeps once; sisr sweeps once per subsampling factor
    let settings: Vec<(Degradation, String)> = match cfg.degradation.kind.as_str() {
        "deblur" => vec![(cfg.true_degradation()?, "sweep_deblur.csv".into())],
        "sisr" => {
            if cfg.sweep.factors.is_empty() {
                return Err(Error::Config("sweep.factors is empty".into()));
            }
            let mut v = Vec::new();
            for &f in &cfg.sweep.factors {
                let kernel = pnp_restore::forward::gaussian_kernel(
                    cfg.degradation.kernel_size,
                    cfg.degradation.sigma_blur,
                )?;
                v.push((
                    Degradation::sisr(kernel, f, cfg.degradation.noise_sigma)?,
                    format!("sweep_sisr_s{f}.csv"),
                ));
            }
            v
        }
        other => {
            return Err(Error::Config(format!(
                "degradation.kind must be 'deblur' or 'sisr', got '{other}'"
            )))
        }
    };

    let mut trend_ok = true;
    for (true_deg, csv_name) in &settings {
        let mut csv_rows = Vec::new();
        let mut means = Vec::new();
        for &sigma_est in &cfg.sweep.est_sigmas {
            let outcomes = restore_set(
                &images,
                true_deg,
                sigma_est,
                &swp,
                &net,
                &episode,
                cfg.ppo.sigma_train,
                cfg.run.jobs,
            )?;
            let psnrs: Vec<f64> = outcomes.iter().map(|o| o.restored_psnr).collect();
            let (mean, std) = mean_std(&psnrs);
            let row = SweepRow {
                sigma_est,
                mean_psnr: mean,
                std_psnr: std,
                n_images: psnrs.len(),
            };
            csv_rows.push(format!(
                "{},{},{},{}",
                row.sigma_est, row.mean_psnr, row.std_psnr, row.n_images
            ));
            means.push(mean);
        }
        write_csv(
            &out_dir.join(csv_name),
            "sigma_est,mean_psnr,std_psnr,n_images",
            &csv_rows,
        )?;
        let decreasing = means.windows(2).all(|w| w[1] < w[0]);
        println!("{csv_name} trend_decreasing {decreasing}");
        trend_ok &= decreasing;
    }
    if assert_trend && !trend_ok {
        eprintln!("trend assertion failed: mean PSNR not strictly decreasing in sigma_est");
        return Ok(ExitCode::from(4));
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_psnr(reference: &Path, image: &Path) -> Result<ExitCode> {
    let a = load_image(reference)?;
    let b = load_image(image)?;
    println!("psnr {}", psnr(&a, &b)?);
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify_dataset(dir: &Path, min_count: usize, min_size: usize) -> Result<ExitCode> {
    let paths = list_images(dir)?;
    if paths.len() < min_count {
        return Err(Error::Dataset(format!(
            "{} has {} images, need at least {min_count}",
            dir.display(),
            paths.len()
        )));
    }
    let mut min_dims = (usize::MAX, usize::MAX);
    let mut max_dims = (0usize, 0usize);
    for path in &paths {
        let img = load_image(path)?;
        let (h, w) = (img.height(), img.width());
        if h < min_size || w < min_size {
            return Err(Error::Dataset(format!(
                "{} is {h}x{w}, need at least {min_size}x{min_size}",
                path.display()
            )));
        }
        min_dims = (min_dims.0.min(h), min_dims.1.min(w));
        max_dims = (max_dims.0.max(h), max_dims.1.max(w));
    }
    println!("count {}", paths.len());
    println!("min_dims {}x{}", min_dims.0, min_dims.1);
    println!("max_dims {}x{}", max_dims.0, max_dims.1);
    Ok(ExitCode::SUCCESS)
}
