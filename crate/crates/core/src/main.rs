//! Command-line driver for the two-stage pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/config error,
//! 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ddmikit::diffusion::Guidance;
use ddmikit::error::DdmiError;
use ddmikit::pipeline::{
    decompose, generate_images, generate_occupancy, split_indices, write_image_samples,
    write_occupancy_samples, Checkpoint, Config, Dataset, MetricsWriter, PipelineState,
};

const USAGE: &str = "\
ddmikit - train and sample a two-stage latent-diffusion model over
coordinate-decoded signals

USAGE:
    ddmikit <command> [--config FILE] [--seed N] [--out DIR] [options]

COMMANDS:
    train-vae    stage 1: fit encoder, basis-field decoder, read-out MLP
                   [--resume CKPT]
    train-ldm    stage 2: fit the latent denoiser on a frozen stage 1
                   --vae CKPT | --resume CKPT
    sample       generate images or shapes from a trained checkpoint
                   --ckpt CKPT [--resolution N] [--count N]
                   [--class K --guidance W]
    decompose    render one sample from a single basis-field scale and
                 report its spectral band energies
                   --ckpt CKPT --keep-scale {1|2|3}
    eval         reconstruction metrics over the config dataset
                   --ckpt CKPT
    config       print the effective configuration
                   --dump

GLOBAL FLAGS:
    --config FILE   TOML configuration (defaults apply when omitted)
    --seed N        overrides the config seed
    --out DIR       output directory (default: out)
";

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &DdmiError) -> u8 {
    match e {
        DdmiError::Config(msg) if msg.starts_with("usage:") => 1,
        DdmiError::NonFinite { .. } | DdmiError::NonFiniteSample { .. } => 3,
        _ => 2,
    }
}

fn usage_error(msg: &str) -> DdmiError {
    DdmiError::Config(format!("usage: {msg}\n\n{USAGE}"))
}

struct Cli {
    command: String,
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: PathBuf,
    options: std::collections::HashMap<String, String>,
}

fn parse_cli(args: &[String]) -> Result<Cli, DdmiError> {
    if args.is_empty() || args[0] == "--help" || args[0] == "-h" {
        return Err(usage_error("a command is required"));
    }
    let command = args[0].clone();
    let mut config = None;
    let mut seed = None;
    let mut out = PathBuf::from("out");
    let mut options = std::collections::HashMap::new();
    let mut i = 1;
    while i < args.len() {
        let flag = args[i].clone();
        let value = |name: &str, i: &mut usize| -> Result<String, DdmiError> {
            *i += 1;
            args.get(*i).cloned().ok_or_else(|| usage_error(&format!("{name} needs a value")))
        };
        match flag.as_str() {
            "--config" => config = Some(PathBuf::from(value("--config", &mut i)?)),
            "--seed" => {
                seed = Some(
                    value("--seed", &mut i)?
                        .parse::<u64>()
                        .map_err(|_| usage_error("--seed must be an integer"))?,
                )
            }
            "--out" => out = PathBuf::from(value("--out", &mut i)?),
            "--dump" => {
                options.insert("dump".into(), "1".into());
            }
            "--resume" | "--vae" | "--ckpt" | "--resolution" | "--count" | "--class"
            | "--guidance" | "--keep-scale" => {
                let key = flag.trim_start_matches("--").to_string();
                let v = value(&flag, &mut i)?;
                options.insert(key, v);
            }
            other => return Err(usage_error(&format!("unknown flag '{other}'"))),
        }
        i += 1;
    }
    Ok(Cli { command, config, seed, out, options })
}

fn run(args: &[String]) -> Result<(), DdmiError> {
    let cli = parse_cli(args)?;
    match cli.command.as_str() {
        "train-vae" => train_vae(&cli),
        "train-ldm" => train_ldm(&cli),
        "sample" => sample_cmd(&cli),
        "decompose" => decompose_cmd(&cli),
        "eval" => eval_cmd(&cli),
        "config" => config_cmd(&cli),
        other => Err(usage_error(&format!("unknown command '{other}'"))),
    }
}

fn load_config(cli: &Cli) -> Result<Config, DdmiError> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn opt_parse<T: std::str::FromStr>(cli: &Cli, key: &str) -> Result<Option<T>, DdmiError> {
    match cli.options.get(key) {
        None => Ok(None),
        Some(v) => v
            .parse::<T>()
            .map(Some)
            .map_err(|_| usage_error(&format!("--{key} has an invalid value '{v}'"))),
    }
}

fn config_cmd(cli: &Cli) -> Result<(), DdmiError> {
    if !cli.options.contains_key("dump") {
        return Err(usage_error("config supports --dump"));
    }
    let cfg = load_config(cli)?;
    print!("{}", cfg.dump());
    Ok(())
}

fn train_vae(cli: &Cli) -> Result<(), DdmiError> {
    std::fs::create_dir_all(&cli.out)?;
    let mut state = match cli.options.get("resume") {
        Some(path) => {
            let ck = Checkpoint::load(Path::new(path))?;
            if cli.config.is_some() {
                eprintln!("note: --config ignored; resuming with the checkpoint's config");
            }
            PipelineState::from_checkpoint(&ck)?
        }
        None => PipelineState::init(load_config(cli)?)?,
    };
    let data = Dataset::from_config(&state.cfg)?;
    let total = state.cfg.stage1_steps;
    if state.stage1_step >= total {
        println!("stage 1 already at step {} of {total}", state.stage1_step);
        return Ok(());
    }
    let mut metrics = MetricsWriter::create(
        &cli.out.join("stage1_metrics.csv"),
        &["loss", "recon", "kl", "lambda", "seconds"],
    )?;
    let every = state.cfg.checkpoint_every.max(1);
    let ckpt_path = cli.out.join("stage1.ckpt");
    while state.stage1_step < total {
        let chunk = every.min(total - state.stage1_step);
        let (loss, recon, kl) = state.train_stage1(&data, chunk, Some(&mut metrics))?;
        state.to_checkpoint()?.save(&ckpt_path)?;
        let (_, holdout) = split_indices(&state.cfg, data.len());
        let eval = if holdout.is_empty() {
            f64::NAN
        } else {
            state.eval_reconstruction(&data, &holdout)?
        };
        println!(
            "step {}/{total}  loss {loss:.4}  recon {recon:.4}  kl {kl:.2}  holdout {eval:.2}",
            state.stage1_step
        );
    }
    println!("stage-1 checkpoint: {}", ckpt_path.display());
    Ok(())
}

fn train_ldm(cli: &Cli) -> Result<(), DdmiError> {
    std::fs::create_dir_all(&cli.out)?;
    let mut state = match (cli.options.get("resume"), cli.options.get("vae")) {
        (Some(path), _) => PipelineState::from_checkpoint(&Checkpoint::load(Path::new(path))?)?,
        (None, Some(path)) => PipelineState::from_checkpoint(&Checkpoint::load(Path::new(path))?)?,
        (None, None) => return Err(usage_error("train-ldm needs --vae or --resume")),
    };
    let data = Dataset::from_config(&state.cfg)?;
    let total = state.cfg.stage2_steps;
    if state.stage2_step >= total {
        println!("stage 2 already at step {} of {total}", state.stage2_step);
        return Ok(());
    }
    let mut metrics =
        MetricsWriter::create(&cli.out.join("stage2_metrics.csv"), &["loss", "seconds"])?;
    let every = state.cfg.checkpoint_every.max(1);
    let ckpt_path = cli.out.join("stage2.ckpt");
    while state.stage2_step < total {
        let chunk = every.min(total - state.stage2_step);
        let losses = state.train_stage2(&data, chunk, Some(&mut metrics))?;
        state.to_checkpoint()?.save(&ckpt_path)?;
        println!(
            "step {}/{total}  loss {:.4}",
            state.stage2_step,
            losses.last().copied().unwrap_or(f64::NAN)
        );
    }
    println!("stage-2 checkpoint: {}", ckpt_path.display());
    Ok(())
}

fn load_state(cli: &Cli) -> Result<PipelineState, DdmiError> {
    let path = cli
        .options
        .get("ckpt")
        .ok_or_else(|| usage_error("--ckpt is required"))?;
    PipelineState::from_checkpoint(&Checkpoint::load(Path::new(path))?)
}

fn sample_cmd(cli: &Cli) -> Result<(), DdmiError> {
    let state = load_state(cli)?;
    let count: usize = opt_parse(cli, "count")?.unwrap_or(4);
    let seed: u64 = cli.seed.unwrap_or(state.cfg.seed);
    let class: Option<usize> = opt_parse(cli, "class")?;
    let weight: f64 = opt_parse(cli, "guidance")?.unwrap_or(3.0);
    let guidance = class.map(|c| Guidance { class: c, weight });

    std::fs::create_dir_all(&cli.out)?;
    if state.cfg.is_occupancy() {
        let res: usize = opt_parse(cli, "resolution")?.unwrap_or(state.cfg.base_resolution);
        let grids = generate_occupancy(&state, res, count, seed)?;
        write_occupancy_samples(&cli.out, &grids)?;
        println!("wrote {count} occupancy samples to {}", cli.out.display());
    } else {
        let rho: usize = opt_parse(cli, "resolution")?.unwrap_or(state.cfg.base_resolution);
        let samples = generate_images(&state, rho, count, seed, guidance)?;
        let paths = write_image_samples(&cli.out, &samples)?;
        for p in paths {
            println!("{}", p.display());
        }
    }
    Ok(())
}

fn decompose_cmd(cli: &Cli) -> Result<(), DdmiError> {
    let state = load_state(cli)?;
    let keep: usize =
        opt_parse(cli, "keep-scale")?.ok_or_else(|| usage_error("--keep-scale is required"))?;
    let seed: u64 = cli.seed.unwrap_or(state.cfg.seed);
    let report = decompose(&state, keep, seed)?;
    std::fs::create_dir_all(&cli.out)?;
    let path = cli.out.join(format!("decompose_scale{keep}_seed{seed}.png"));
    ddmikit::pipeline::write_png(&path, &report.image)?;
    let total = report.low + report.mid + report.high;
    println!("kept scale {keep}; spectral energy split (DC excluded):");
    println!("  low  {:.4e} ({:.1}%)", report.low, 100.0 * report.low / total);
    println!("  mid  {:.4e} ({:.1}%)", report.mid, 100.0 * report.mid / total);
    println!("  high {:.4e} ({:.1}%)", report.high, 100.0 * report.high / total);
    println!("image: {}", path.display());
    Ok(())
}

fn eval_cmd(cli: &Cli) -> Result<(), DdmiError> {
    let state = load_state(cli)?;
    let data = Dataset::from_config(&state.cfg)?;
    let (train, holdout) = split_indices(&state.cfg, data.len());
    let metric = if state.cfg.is_occupancy() { "iou" } else { "psnr" };
    let train_sample: Vec<usize> = train.iter().copied().take(32).collect();
    let train_score = state.eval_reconstruction(&data, &train_sample)?;
    println!("train {metric} (first {} items): {train_score:.3}", train_sample.len());
    if !holdout.is_empty() {
        let holdout_score = state.eval_reconstruction(&data, &holdout)?;
        println!("holdout {metric} ({} items): {holdout_score:.3}", holdout.len());
    }
    Ok(())
}
