//! The `samp` command: `pretrain`, `eval`, `gradcheck` and `synth`.
//!
//! Exit codes: 0 on success, 1 for usage and configuration problems
//! (including a missing checkpoint), 2 for failures while running.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use samp_core::config::RunConfig;
use samp_core::dataset::{gen_synthetic, one_hot_dataset, Dataset, SyntheticSpec};
use samp_core::episodes::{evaluate, EvalReport};
use samp_core::pretrain::{augment, check_step_gradients, epoch_means, pretrain_run, AugmentationSpec, LossRecord};
use samp_core::{Error, Matrix, Model, Rng};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "samp", version, about = "Unsupervised few-shot learning with message passing and optimal transport")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pre-train the encoder and message-passing layer on unlabeled samples.
    Pretrain {
        #[arg(long, short)]
        config: PathBuf,
    },
    /// Evaluate a checkpoint on few-shot episodes.
    Eval {
        #[arg(long, short)]
        config: PathBuf,
        /// Overrides the config's `checkpoint`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Classify with unprojected supports.
        #[arg(long)]
        no_ot: bool,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Compare analytic and finite-difference gradients of one training step.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic Gaussian-cluster dataset.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 5)]
    pub input_dim: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long, default_value_t = 3)]
    pub sources: usize,
    #[arg(long, default_value_t = 1)]
    pub augmentations: usize,
    #[arg(long, default_value_t = 0.7)]
    pub beta: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Manifest path; class files are written beside it.
    #[arg(long, short)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 16)]
    pub classes: usize,
    #[arg(long, default_value_t = 40)]
    pub per_class: usize,
    #[arg(long, default_value_t = 32)]
    pub dim: usize,
    #[arg(long, default_value_t = 0.8)]
    pub sigma: f64,
    /// Displace queries by `+s, −s, +s, …` at evaluation time.
    #[arg(long)]
    pub shift: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Move the last `n` classes to `--heldout-out`.
    #[arg(long, requires = "heldout_out")]
    pub heldout: Option<usize>,
    #[arg(long)]
    pub heldout_out: Option<PathBuf>,
    /// One-hot samples (`dim = classes`, no noise) instead of Gaussian clusters.
    #[arg(long)]
    pub oracle: bool,
}

/// Failure with the exit code it maps to.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Runtime(m) => m,
        }
    }
}

fn config_err(context: &str, e: Error) -> CliError {
    CliError::Config(format!("{context}: {e}"))
}

fn runtime_err(context: &str, e: Error) -> CliError {
    CliError::Runtime(format!("{context}: {e}"))
}

pub fn run(cli: Cli) -> i32 {
    let result = match cli.command {
        Command::Pretrain { config } => run_pretrain(&config),
        Command::Eval { config, checkpoint, no_ot, episodes } => {
            run_eval(&config, checkpoint.as_deref(), no_ot, episodes)
        }
        Command::Gradcheck(args) => run_gradcheck(&args),
        Command::Synth(args) => run_synth(&args),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(path).map_err(|e| config_err(&path.display().to_string(), e))?;
    cfg.apply_seed_override(std::env::var("SAMP_SEED").ok().as_deref()).map_err(|e| config_err("SAMP_SEED", e))?;
    cfg.validate().map_err(|e| config_err(&path.display().to_string(), e))?;
    Ok(cfg)
}

fn required<'a>(value: &'a Option<PathBuf>, key: &str) -> Result<&'a Path, CliError> {
    value.as_deref().ok_or_else(|| CliError::Config(format!("config key `{key}` is required")))
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn history_jsonl(history: &[LossRecord]) -> String {
    history.iter().map(|r| serde_json::to_string(r).expect("plain record") + "\n").collect()
}

pub fn loss_csv(history: &[LossRecord]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (e, m) in epoch_means(history).iter().enumerate() {
        let _ = writeln!(out, "{e},{m:?}");
    }
    out
}

pub fn run_pretrain(config: &Path) -> Result<(), CliError> {
    let cfg = load_config(config)?;
    let data_path = required(&cfg.train_data, "train_data")?;
    let ckpt = required(&cfg.checkpoint, "checkpoint")?;
    let data = Dataset::load(data_path).map_err(|e| config_err(&data_path.display().to_string(), e))?;
    let model = cfg.init_model(data.input_dim()).map_err(|e| config_err("model", e))?;
    let samples = data.all_samples();
    let epochs = cfg.pretrain.epochs;
    let outcome = pretrain_run(&samples, model, &cfg.pretrain, |epoch, _, history| {
        let mean = epoch_means(history).last().copied().unwrap_or(f64::NAN);
        println!("epoch {}/{epochs} loss {mean:.6}", epoch + 1);
        Ok(())
    })
    .map_err(|e| runtime_err("pre-training", e))?;
    write_file(ckpt, &outcome.model.to_bytes())?;
    let history_path = cfg.history.clone().unwrap_or_else(|| with_suffix(ckpt, ".history.jsonl"));
    write_file(&history_path, history_jsonl(&outcome.history).as_bytes())?;
    if let Some(csv) = &cfg.loss_csv {
        write_file(csv, loss_csv(&outcome.history).as_bytes())?;
    }
    println!("checkpoint {}", ckpt.display());
    Ok(())
}

pub fn run_eval(
    config: &Path,
    checkpoint: Option<&Path>,
    no_ot: bool,
    episodes: Option<usize>,
) -> Result<(), CliError> {
    let mut cfg = load_config(config)?;
    if no_ot {
        cfg.protocol.ot_enabled = false;
    }
    if let Some(n) = episodes {
        if n == 0 {
            return Err(CliError::Config("--episodes must be positive".into()));
        }
        cfg.protocol.episodes = n;
    }
    let ckpt = match checkpoint {
        Some(p) => p,
        None => required(&cfg.checkpoint, "checkpoint")?,
    };
    if !ckpt.exists() {
        return Err(CliError::Config(format!("checkpoint {} not found", ckpt.display())));
    }
    let model = Model::load(ckpt).map_err(|e| runtime_err(&ckpt.display().to_string(), e))?;
    let data_path = required(&cfg.eval_data, "eval_data")?;
    let data = Dataset::load(data_path).map_err(|e| config_err(&data_path.display().to_string(), e))?;
    let report = evaluate(&model, &data, &cfg.protocol, cfg.seed).map_err(|e| runtime_err("evaluation", e))?;
    println!("{}", summary_line(&report));
    let report_path = cfg.report.clone().unwrap_or_else(|| with_suffix(ckpt, ".report.json"));
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_file(&report_path, json.as_bytes())?;
    if let Some(log) = &cfg.episode_log {
        write_file(log, report.episodes_jsonl().as_bytes())?;
    }
    Ok(())
}

pub fn summary_line(report: &EvalReport) -> String {
    let p = &report.config;
    format!(
        "accuracy {:.2} ± {:.2} % ({}-way {}-shot, {} episodes, OT {})",
        100.0 * report.mean,
        100.0 * report.ci95,
        p.ways,
        p.shots,
        p.episodes,
        if p.ot_enabled { "on" } else { "off" }
    )
}

pub fn run_gradcheck(args: &GradcheckArgs) -> Result<(), CliError> {
    let model = Model::init(args.input_dim, args.dim, 1, args.heads, args.seed).map_err(|e| config_err("model", e))?;
    let mut rng = Rng::new(args.seed.wrapping_add(1));
    let n = args.sources * args.input_dim;
    let x = Matrix::new(args.sources, args.input_dim, (0..n).map(|_| rng.normal()).collect())
        .map_err(|e| runtime_err("inputs", e))?;
    let aug = augment(&AugmentationSpec::default(), &x, args.augmentations, &mut rng)
        .map_err(|e| config_err("augmentation", e))?;
    let report = check_step_gradients(&model, &x, &aug, args.beta, 0.0, args.step)
        .map_err(|e| runtime_err("gradient check", e))?;
    let worst = report.worst.as_ref().map_or("-".to_string(), |(name, i)| format!("{name}[{i}]"));
    println!("checked {} entries, max relative error {:.3e} at {worst}", report.entries_checked, report.max_rel_error);
    if report.max_rel_error > args.tolerance {
        return Err(CliError::Runtime(format!(
            "max relative error {:.3e} exceeds {:.1e}",
            report.max_rel_error, args.tolerance
        )));
    }
    Ok(())
}

pub fn alternating_shift(dim: usize, magnitude: f64) -> Vec<f64> {
    (0..dim).map(|i| if i % 2 == 0 { magnitude } else { -magnitude }).collect()
}

pub fn run_synth(args: &SynthArgs) -> Result<(), CliError> {
    let data = if args.oracle {
        one_hot_dataset(args.classes, args.per_class).map_err(|e| config_err("oracle dataset", e))?
    } else {
        let spec = SyntheticSpec {
            classes: args.classes,
            per_class: args.per_class,
            dim: args.dim,
            cluster_sigma: args.sigma,
            shift: args.shift.map(|s| alternating_shift(args.dim, s)),
            seed: args.seed,
        };
        gen_synthetic(&spec).map_err(|e| config_err("synthetic dataset", e))?
    };
    let save = |d: &Dataset, path: &Path| {
        d.save(path).map_err(|e| runtime_err(&path.display().to_string(), e))?;
        println!("{} classes x {} samples -> {}", d.num_classes(), d.class(0).rows(), path.display());
        Ok::<(), CliError>(())
    };
    match (args.heldout, &args.heldout_out) {
        (Some(m), Some(path)) => {
            if m == 0 || m >= data.num_classes() {
                return Err(CliError::Config(format!(
                    "--heldout {m} must leave at least one class on each side of {}",
                    data.num_classes()
                )));
            }
            let split = data.num_classes() - m;
            save(&data.subset(0..split).map_err(|e| config_err("split", e))?, &args.out)?;
            save(&data.subset(split..data.num_classes()).map_err(|e| config_err("split", e))?, path)?;
        }
        _ => save(&data, &args.out)?,
    }
    Ok(())
}
