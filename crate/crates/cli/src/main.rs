use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use scm_cli::analysis::run_cka;
use scm_cli::dataset::{run_generate, split_dir, Split};
use scm_cli::evaluate::run_eval;
use scm_cli::train::run_train;
use scm_cli::{CliResult, ExperimentConfig};
use scm_core::network::Variant;
use scm_core::objective::{Objective, SegMode};

#[derive(Parser)]
#[command(
    name = "scm-mrcnn",
    version,
    about = "Train, evaluate and compare road-defect instance segmentation models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment file; missing keys take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Dataset root (holds train/ and eval/).
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic train and eval splits.
    GenerateData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train_count: Option<usize>,
        #[arg(long)]
        eval_count: Option<usize>,
    },
    /// Train a model and write checkpoints plus a JSONL log.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        momentum: Option<f64>,
        /// Gradient-norm clip; 0 disables it.
        #[arg(long)]
        clip_norm: Option<f64>,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
        #[arg(long, value_parser = parse_objective)]
        objective: Option<Objective>,
        #[arg(long, value_parser = parse_seg_mode)]
        seg_mode: Option<SegMode>,
        #[arg(long)]
        max_images: Option<usize>,
    },
    /// Evaluate a checkpoint; writes report.txt and report.json.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Split directory to evaluate; defaults to the eval split.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Layer-similarity map between two checkpoints.
    Cka {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint_a: PathBuf,
        #[arg(long)]
        checkpoint_b: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        examples: Option<usize>,
    },
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown variant {s}"))
}

fn parse_objective(s: &str) -> Result<Objective, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown objective {s}"))
}

fn parse_seg_mode(s: &str) -> Result<SegMode, String> {
    serde_json::from_value(serde_json::Value::String(s.into()))
        .map_err(|_| format!("unknown segmentation mode {s}"))
}

fn base_config(c: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    if let Some(d) = &c.data_dir {
        cfg.data.dir = d.clone();
    }
    Ok(cfg)
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenerateData {
            common,
            train_count,
            eval_count,
        } => {
            let mut cfg = base_config(&common)?;
            set(&mut cfg.data.train_count, train_count);
            set(&mut cfg.data.eval_count, eval_count);
            for (dir, n) in run_generate(&cfg)? {
                println!("wrote {n} scenes to {}", dir.display());
            }
        }
        Command::Train {
            common,
            epochs,
            batch_size,
            learning_rate,
            momentum,
            clip_norm,
            variant,
            objective,
            seg_mode,
            max_images,
        } => {
            let mut cfg = base_config(&common)?;
            set(&mut cfg.train.epochs, epochs);
            set(&mut cfg.train.batch_size, batch_size);
            set(&mut cfg.train.learning_rate, learning_rate);
            set(&mut cfg.train.momentum, momentum);
            if let Some(c) = clip_norm {
                cfg.train.clip_norm = (c > 0.0).then_some(c);
            }
            set(&mut cfg.model.variant, variant);
            set(&mut cfg.train.objective, objective);
            set(&mut cfg.train.seg_mode, seg_mode);
            if max_images.is_some() {
                cfg.train.max_images = max_images;
            }
            let outcome = run_train(&cfg)?;
            for e in &outcome.log {
                println!(
                    "{}",
                    serde_json::to_string(e).expect("log entry serializes")
                );
            }
            println!("final checkpoint: {}", outcome.final_checkpoint.display());
            println!(
                "best checkpoint: {} (epoch {})",
                outcome.best_checkpoint.display(),
                outcome.best_epoch
            );
        }
        Command::Eval {
            common,
            checkpoint,
            dataset,
        } => {
            let cfg = base_config(&common)?;
            let data = dataset.unwrap_or_else(|| split_dir(&cfg, Split::Eval));
            let report = run_eval(&checkpoint, &data, &cfg.eval, &cfg.out)?;
            print!("{}", report.to_text());
        }
        Command::Cka {
            common,
            checkpoint_a,
            checkpoint_b,
            dataset,
            examples,
        } => {
            let mut cfg = base_config(&common)?;
            set(&mut cfg.cka.examples, examples);
            let data = dataset.unwrap_or_else(|| split_dir(&cfg, Split::Eval));
            let map = run_cka(&checkpoint_a, &checkpoint_b, &data, &cfg.cka, &cfg.out)?;
            println!("mean_cka={}", map.mean());
            println!(
                "map: {}",
                Path::new(&cfg.out)
                    .join(scm_cli::analysis::MAP_JSON)
                    .display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
