//! End-to-end contract tests for the command-line interface: exit codes,
//! artifact layout, CSV shape, and byte-identical determinism.

mod common;

use std::path::Path;
use std::process::{Command, Output};

use pnp_restore::image::{add_gaussian_noise, save_image};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pnp-restore"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn pnp-restore")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_config(path: &Path, body: &str) {
    std::fs::write(path, body).unwrap();
}

#[test]
fn help_succeeds_and_unknown_flags_are_usage_errors() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["no-such-command"])), 1);
    assert_eq!(code(&run(&["psnr", "--bogus-flag", "x"])), 1);
}

#[test]
fn psnr_command_matches_library_value() {
    let dir = tempfile::tempdir().unwrap();
    let a = common::synthetic_image(32, 32, 1);
    let b = add_gaussian_noise(&a, 10.0, 2).unwrap().clipped();
    let pa = dir.path().join("a.pgm");
    let pb = dir.path().join("b.pgm");
    save_image(&a, &pa).unwrap();
    save_image(&b, &pb).unwrap();
    let out = run(&["psnr", "--reference", pa.to_str().unwrap(), "--image", pb.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let printed: f64 = stdout(&out)
        .trim()
        .strip_prefix("psnr ")
        .unwrap()
        .parse()
        .unwrap();
    // the saved PGMs are quantized to u8, so compare against their own PSNR
    let qa = pnp_restore::image::load_image(&pa).unwrap();
    let qb = pnp_restore::image::load_image(&pb).unwrap();
    let expected = pnp_restore::image::psnr(&qa, &qb).unwrap();
    assert!((printed - expected).abs() < 1e-9);
}

#[test]
fn verify_dataset_reports_counts_and_enforces_minimums() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("set");
    common::write_dataset(&data, &common::synthetic_dataset(3, 24, 20, 5));
    let out = run(&["verify-dataset", "--dir", data.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("count 3"));
    assert!(text.contains("min_dims 24x20"));

    let out = run(&[
        "verify-dataset",
        "--dir",
        data.to_str().unwrap(),
        "--min-count",
        "5",
    ]);
    assert_eq!(code(&out), 2);
    let out = run(&[
        "verify-dataset",
        "--dir",
        data.to_str().unwrap(),
        "--min-size",
        "32",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn config_errors_exit_1_and_data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    write_config(&cfg, "[run]\nsede = 1\n");
    let out = run(&["train-denoiser", "--config", cfg.to_str().unwrap()]);
    assert_eq!(code(&out), 1, "unknown config key must be a usage error");

    // valid config pointing at an empty dataset directory
    let empty = dir.path().join("empty");
    std::fs::create_dir_all(&empty).unwrap();
    let cfg2 = dir.path().join("empty.toml");
    write_config(
        &cfg2,
        &format!(
            "[run]\noutput_dir = \"{}\"\n[dataset]\ntrain_dir = \"{}\"\n",
            dir.path().join("out").display(),
            empty.display()
        ),
    );
    let out = run(&["train-denoiser", "--config", cfg2.to_str().unwrap()]);
    assert_eq!(code(&out), 2, "empty dataset must be a data error");

    // missing checkpoint
    let img = dir.path().join("x.pgm");
    save_image(&common::synthetic_image(16, 16, 9), &img).unwrap();
    let out = run(&[
        "denoise",
        "--checkpoint",
        dir.path().join("nope.ckpt").to_str().unwrap(),
        "--input",
        img.to_str().unwrap(),
        "--output",
        dir.path().join("y.pgm").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn train_smoke_then_denoise_and_restore_commands() {
    let dir = tempfile::tempdir().unwrap();
    let train_dir = dir.path().join("train");
    let eval_dir = dir.path().join("eval");
    common::write_dataset(&train_dir, &common::synthetic_dataset(8, 32, 32, 10));
    common::write_dataset(&eval_dir, &common::synthetic_dataset(2, 48, 48, 20));
    let out_dir = dir.path().join("out");

    let cfg_path = dir.path().join("smoke.toml");
    write_config(
        &cfg_path,
        &format!(
            r#"
[run]
seed = 3
output_dir = "{out}"

[dataset]
train_dir = "{train}"
eval_dir = "{eval}"

[net]
channels = 6
encoder_layers = 1

[ppo]
total_epochs = 10
batch_size = 2
patch_size = 17
learning_rate = 1e-3

[degradation]
kernel_size = 7
noise_sigma = 5.0
factor = 2

[pnp]
iterations = 3

[sweep]
est_sigmas = [2.0, 2.4]
factors = [2]
"#,
            out = out_dir.display(),
            train = train_dir.display(),
            eval = eval_dir.display()
        ),
    );

    // train: 10 epochs -> metrics CSV with 10 data rows + artifacts
    let out = run(&["train-denoiser", "--config", cfg_path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], "epoch,mean_reward,entropy,value_loss,holdout_psnr");
    assert_eq!(lines.len(), 11);
    assert!(!metrics.contains('\r'));
    let ckpt = out_dir.join("denoiser.ckpt");
    assert!(ckpt.exists());
    assert!(out_dir.join("denoiser.ckpt.meta.json").exists());
    assert!(out_dir.join("smoke.resolved.toml").exists());

    // resolved config must itself be loadable and reproduce the run exactly
    let metrics_first = metrics.clone();
    let resolved = out_dir.join("smoke.resolved.toml");
    let out = run(&["train-denoiser", "--config", resolved.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap(),
        metrics_first,
        "re-run from resolved config must be byte-identical"
    );

    // denoise with a reference prints both PSNR lines
    let input = eval_dir.join("img000.pgm");
    let denoised = dir.path().join("denoised.pgm");
    let out = run(&[
        "denoise",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--input",
        input.to_str().unwrap(),
        "--output",
        denoised.to_str().unwrap(),
        "--reference",
        input.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    assert!(text.contains("psnr_input"));
    assert!(text.contains("psnr_output"));
    assert!(denoised.exists());

    // deblur: per-image rows + mean row, restored images written
    let out = run(&[
        "deblur",
        "--config",
        cfg_path.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("deblur_psnr.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "image,psnr_degraded,psnr_restored");
    assert_eq!(lines.len(), 4); // header + 2 images + mean
    assert!(lines[3].starts_with("mean,"));
    assert!(out_dir.join("img000_restored.png").exists());

    // determinism: re-running reproduces the CSV byte for byte
    let first = csv.clone();
    let out = run(&[
        "deblur",
        "--config",
        cfg_path.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    assert_eq!(std::fs::read_to_string(out_dir.join("deblur_psnr.csv")).unwrap(), first);

    // sisr writes its own CSV
    let out = run(&[
        "sisr",
        "--config",
        cfg_path.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("sisr_psnr.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);

    // sweep: one CSV with a row per estimated sigma
    let out = run(&[
        "sweep",
        "--config",
        cfg_path.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("sweep_deblur.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "sigma_est,mean_psnr,std_psnr,n_images");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("2.2,") || lines[1].starts_with("2,"));

    // sisr sweep over factors [2] -> one CSV per factor
    let cfg_sisr = dir.path().join("smoke_sisr.toml");
    let mut body = std::fs::read_to_string(&cfg_path).unwrap();
    body = body.replace("[degradation]", "[degradation]\nkind = \"sisr\"");
    write_config(&cfg_sisr, &body);
    let out = run(&[
        "sweep",
        "--config",
        cfg_sisr.to_str().unwrap(),
        "--checkpoint",
        ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("sweep_sisr_s2.csv").exists());
}
