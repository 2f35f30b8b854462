use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use psinet::cli::{self, parse_instances, parse_widths, RunConfig};
use psinet::net::Variant;

#[derive(Parser)]
#[command(
    name = "psinet",
    about = "Multi-task segmentation: mask, contour, and distance decoders over one encoder"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; unset flags fall back to the config
/// file, then to built-in defaults.
#[derive(Args, Default)]
struct CommonFlags {
    /// Plain-text key=value config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input directory (dataset root, or mask directory for derive)
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Network variant: m, mc, md, or mcd
    #[arg(long)]
    variant: Option<String>,
    /// Training epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Learning rate
    #[arg(long)]
    lr: Option<f64>,
    /// Batch size
    #[arg(long)]
    batch: Option<usize>,
    /// Mask loss weight
    #[arg(long)]
    lambda1: Option<f64>,
    /// Contour loss weight
    #[arg(long)]
    lambda2: Option<f64>,
    /// Distance loss weight
    #[arg(long)]
    lambda3: Option<f64>,
    /// RNG seed
    #[arg(long)]
    seed: Option<u64>,
    /// Number of classes including background
    #[arg(long)]
    classes: Option<usize>,
    /// Comma-separated trimap band widths, e.g. 1,3,5
    #[arg(long)]
    widths: Option<String>,
    /// Fit an ellipse to each predicted class region before metrics
    #[arg(long)]
    ellipse_fit: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Derive contour and distance ground truth from mask PNGs
    Derive {
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Generate a synthetic ellipse dataset with exact masks
    Synth {
        #[command(flatten)]
        common: CommonFlags,
        /// Number of images
        #[arg(long)]
        count: Option<usize>,
        /// Square image side length
        #[arg(long)]
        size: Option<usize>,
        /// Instances per image: N or LO,HI
        #[arg(long)]
        instances: Option<String>,
    },
    /// Train a variant on a dataset directory
    Train {
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Evaluate a checkpoint: per-sample, aggregate, and trimap CSVs
    Eval {
        #[command(flatten)]
        common: CommonFlags,
        /// Checkpoint file
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Predict masks (and contour / distance maps) for images
    Predict {
        #[command(flatten)]
        common: CommonFlags,
        /// Checkpoint file
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Input images
        images: Vec<PathBuf>,
    },
}

fn merge(common: &CommonFlags) -> psinet::Result<RunConfig> {
    let mut flags = RunConfig {
        data: common.data.clone(),
        out: common.out.clone(),
        epochs: common.epochs,
        lr: common.lr,
        batch: common.batch,
        lambda1: common.lambda1,
        lambda2: common.lambda2,
        lambda3: common.lambda3,
        seed: common.seed,
        classes: common.classes,
        ..RunConfig::default()
    };
    if let Some(v) = &common.variant {
        flags.variant = Some(v.parse::<Variant>()?);
    }
    if let Some(w) = &common.widths {
        flags.widths = Some(parse_widths(w)?);
    }
    if common.ellipse_fit {
        flags.ellipse_fit = Some(true);
    }
    let base = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    Ok(flags.over(base))
}

fn run() -> psinet::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Derive { common } => {
            let config = merge(&common)?;
            let outcome = cli::cmd_derive(&config)?;
            println!(
                "derived targets for {} masks -> {} and {}",
                outcome.processed,
                outcome.contours_dir.display(),
                outcome.distances_dir.display()
            );
        }
        Command::Synth {
            common,
            count,
            size,
            instances,
        } => {
            let mut config = merge(&common)?;
            config.count = count.or(config.count);
            config.size = size.or(config.size);
            if let Some(text) = instances {
                config.instances = Some(parse_instances(&text)?);
            }
            let outcome = cli::cmd_synth(&config)?;
            println!(
                "wrote {} image/mask pairs to {} and {}",
                outcome.written,
                outcome.images_dir.display(),
                outcome.masks_dir.display()
            );
        }
        Command::Train { common } => {
            let config = merge(&common)?;
            let outcome = cli::cmd_train(&config)?;
            for w in &outcome.warnings {
                println!("{w}");
            }
            println!(
                "trained {} steps; final validation dice {:.4}; checkpoint {}",
                outcome.steps,
                outcome.final_val_dice,
                outcome.checkpoint.display()
            );
            println!("loss log: {}", outcome.loss_csv.display());
            println!("epoch metrics: {}", outcome.epoch_csv.display());
        }
        Command::Eval { common, checkpoint } => {
            let mut config = merge(&common)?;
            config.checkpoint = checkpoint.or(config.checkpoint);
            let outcome = cli::cmd_eval(&config)?;
            let agg = &outcome.aggregate;
            let hd = agg
                .mean_hausdorff
                .map(|h| format!("{h:.4}"))
                .unwrap_or_else(|| "undefined".into());
            println!(
                "evaluated {} entries: dice {:.4}, jaccard {:.4}, hausdorff {hd} ({} undefined)",
                agg.entries, agg.mean_dice, agg.mean_jaccard, agg.hausdorff_undefined
            );
            println!("per-sample: {}", outcome.per_sample_csv.display());
            println!("aggregate: {}", outcome.aggregate_csv.display());
            println!("trimap curve: {}", outcome.trimap_csv.display());
        }
        Command::Predict {
            common,
            checkpoint,
            images,
        } => {
            let mut config = merge(&common)?;
            config.checkpoint = checkpoint.or(config.checkpoint);
            let outcome = cli::cmd_predict(&config, &images)?;
            for path in &outcome.outputs {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
