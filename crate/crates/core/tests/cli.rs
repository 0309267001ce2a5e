//! End-to-end CLI checks: exit codes, file outputs, determinism.

use std::path::{Path, PathBuf};
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ddmikit"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("ddmikit-cli-test").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Small enough to train both stages in seconds.
const TINY_CONFIG: &str = "\
base_resolution = 16
dataset_size = 12
latent_channels = 2
enc_widths = [6, 6]
dec_widths = [6, 6, 6]
embed_channels = 6
mlp_blocks = 2
scale_hidden = 6
stage1_steps = 30
stage2_steps = 30
stage2_batch = 2
coord_budget = 128
diffusion_steps = 8
denoiser_width0 = 6
denoiser_width1 = 6
denoiser_temb = 6
checkpoint_every = 15
log_every = 10
seed = 3
";

#[test]
fn usage_errors_exit_1() {
    let out = bin().output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin().args(["frobnicate"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin().args(["sample", "--no-such-flag"]).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    let out = bin().args(["sample"]).output().unwrap(); // missing --ckpt
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn data_errors_exit_2() {
    // unreadable checkpoint
    let out = bin().args(["sample", "--ckpt", "/nonexistent.ckpt"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // invalid config (unknown key)
    let dir = scratch("badcfg");
    let cfg = dir.join("bad.toml");
    std::fs::write(&cfg, "definitely_not_a_key = 1\n").unwrap();
    let out = bin()
        .args(["train-vae", "--config", cfg.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn config_dump_round_trips() {
    let out = bin().args(["config", "--dump"]).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("base_resolution"));
    // the dump parses back as a config
    let dir = scratch("dumpcfg");
    let path = dir.join("dumped.toml");
    std::fs::write(&path, &text).unwrap();
    let out = bin()
        .args(["config", "--dump", "--config", path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap(), text);
}

fn train_both_stages(dir: &Path) -> (PathBuf, PathBuf) {
    let cfg = dir.join("cfg.toml");
    std::fs::write(&cfg, TINY_CONFIG).unwrap();
    let out = bin()
        .args(["train-vae", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "train-vae failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stage1 = dir.join("stage1.ckpt");
    assert!(stage1.exists());

    let out = bin()
        .args([
            "train-ldm",
            "--vae",
            stage1.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "train-ldm failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stage2 = dir.join("stage2.ckpt");
    assert!(stage2.exists());
    (stage1, stage2)
}

#[test]
fn full_pipeline_via_cli() {
    let dir = scratch("pipeline");
    let (stage1, stage2) = train_both_stages(&dir);

    // metrics with header and monotone steps
    let csv = std::fs::read_to_string(dir.join("stage1_metrics.csv")).unwrap();
    assert!(csv.starts_with("step,loss,recon,kl,lambda,seconds\n"));
    assert!(csv.lines().count() >= 2);

    // sampling from a stage-1-only checkpoint is a data error
    let out = bin()
        .args(["sample", "--ckpt", stage1.to_str().unwrap(), "--out", dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // sampling twice with the same seed produces identical files
    let s1 = dir.join("s1");
    let s2 = dir.join("s2");
    for out_dir in [&s1, &s2] {
        let out = bin()
            .args([
                "sample",
                "--ckpt",
                stage2.to_str().unwrap(),
                "--count",
                "2",
                "--seed",
                "11",
                "--out",
                out_dir.to_str().unwrap(),
            ])
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "sample failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for name in ["sample_000.png", "sample_001.png"] {
        let a = std::fs::read(s1.join(name)).unwrap();
        let b = std::fs::read(s2.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identically seeded runs");
    }

    // different seed, different file
    let s3 = dir.join("s3");
    bin()
        .args([
            "sample",
            "--ckpt",
            stage2.to_str().unwrap(),
            "--count",
            "1",
            "--seed",
            "12",
            "--out",
            s3.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_ne!(
        std::fs::read(s1.join("sample_000.png")).unwrap(),
        std::fs::read(s3.join("sample_000.png")).unwrap()
    );

    // decompose reports the spectral split and writes an image
    let out = bin()
        .args([
            "decompose",
            "--ckpt",
            stage2.to_str().unwrap(),
            "--keep-scale",
            "2",
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("low") && text.contains("high"));
    assert!(dir.join("decompose_scale2_seed3.png").exists());

    // eval prints psnr lines
    let out = bin()
        .args(["eval", "--ckpt", stage1.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("psnr"));

    // resuming a finished run is a no-op success
    let out = bin()
        .args([
            "train-vae",
            "--resume",
            stage1.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("already"));
}

#[test]
fn occupancy_pipeline_via_cli() {
    let dir = scratch("occupancy");
    let cfg = dir.join("cfg.toml");
    std::fs::write(
        &cfg,
        "\
dataset_kind = \"synthetic-occupancy\"
base_resolution = 16
dataset_size = 8
latent_channels = 2
enc_widths = [6, 6]
dec_widths = [6, 6, 6]
embed_channels = 6
mlp_blocks = 2
scale_hidden = 6
stage1_steps = 20
stage2_steps = 20
stage2_batch = 2
coord_budget = 128
diffusion_steps = 8
denoiser_width0 = 6
denoiser_width1 = 6
denoiser_temb = 6
checkpoint_every = 10
log_every = 10
multiscale = false
seed = 4
",
    )
    .unwrap();
    let out = bin()
        .args(["train-vae", "--config", cfg.to_str().unwrap(), "--out", dir.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = bin()
        .args([
            "train-ldm",
            "--vae",
            dir.join("stage1.ckpt").to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let out = bin()
        .args([
            "sample",
            "--ckpt",
            dir.join("stage2.ckpt").to_str().unwrap(),
            "--count",
            "1",
            "--out",
            dir.to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("shape_000_midslice.pgm").exists());
    assert!(dir.join("shape_000.vox").exists());
    let vox = std::fs::read(dir.join("shape_000.vox")).unwrap();
    assert_eq!(vox.len(), 16 * 16 * 16);
    assert!(vox.iter().all(|&b| b == 0 || b == 1));
}
