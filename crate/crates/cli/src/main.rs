//! `vil`: curation, pseudo-labeling and toy training stages as subcommands
//! chained through files.

mod commands;
mod context;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use vil_core::backends::BackendKind;
use vil_core::error::ErrorCategory;
use vil_core::music::BudgetMode;

use context::Context;

#[derive(Parser, Debug)]
#[command(name = "vil", version, about = "Virtual-image curation and adaptive pseudo-labeling")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Overrides for run configuration values. Accepted by every subcommand.
#[derive(Args, Debug, Clone, Default)]
pub struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Budget rules and builtin vocabulary.
    #[arg(long, global = true, value_enum)]
    pub dataset: Option<DatasetArg>,
    #[arg(long, global = true, value_enum)]
    pub backend: Option<BackendArg>,
    /// Sidecar base URL for the remote backend.
    #[arg(long, global = true, value_name = "URL")]
    pub endpoint: Option<String>,
    #[arg(long, global = true, value_name = "DIR")]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub feature_dim: Option<usize>,
    #[arg(long, global = true)]
    pub tau_scene: Option<f64>,
    #[arg(long, global = true)]
    pub tau_det: Option<f64>,
    #[arg(long, global = true)]
    pub tau_inter: Option<f64>,
    /// Pairwise NMS overlap threshold.
    #[arg(long = "nms", global = true)]
    pub tau_nms: Option<f64>,
    #[arg(long, global = true)]
    pub kappa: Option<f64>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true, overrides_with = "no_freeze_heads")]
    pub freeze_heads: bool,
    #[arg(long, global = true)]
    pub no_freeze_heads: bool,
    /// Interaction list, `name|gerund[|preposition]` per line.
    #[arg(long, global = true, value_name = "FILE")]
    pub actions: Option<PathBuf>,
    /// Object list, `[coco_id] name` per line.
    #[arg(long, global = true, value_name = "FILE")]
    pub objects: Option<PathBuf>,
    #[arg(long, global = true, value_name = "FILE")]
    pub human_words: Option<PathBuf>,
    #[arg(long, global = true, value_name = "FILE")]
    pub scene_words: Option<PathBuf>,
    #[arg(long, global = true, value_name = "FILE")]
    pub scene_map: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DatasetArg {
    Hico,
    Vcoco,
}

impl From<DatasetArg> for BudgetMode {
    fn from(d: DatasetArg) -> Self {
        match d {
            DatasetArg::Hico => BudgetMode::Hico,
            DatasetArg::Vcoco => BudgetMode::Vcoco,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum BackendArg {
    Mock,
    Cache,
    Remote,
}

impl From<BackendArg> for BackendKind {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Mock => BackendKind::Mock,
            BackendArg::Cache => BackendKind::Cache,
            BackendArg::Remote => BackendKind::Remote,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a toy real dataset: images, manifests, vocabulary and frequency table.
    ToyData {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Render the prompts the curation run would start from.
    Prompts {
        #[arg(long, value_name = "FILE")]
        freq: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Generate and filter images until each category's budget is met.
    Generate {
        #[arg(long, value_name = "FILE")]
        freq: Option<PathBuf>,
        /// Real images whose scene features anchor the scene filter.
        #[arg(long, value_name = "FILE")]
        real_manifest: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Re-run the three filters over an existing curated manifest.
    Filter {
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        #[arg(long, value_name = "FILE")]
        real_manifest: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Dump toy detector predictions for every image of a manifest.
    PredictToy {
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Use the student parameters instead of the teacher's.
        #[arg(long)]
        student: bool,
    },
    /// Correct annotations and build pseudo-labels from teacher predictions.
    Amf {
        #[arg(long, value_name = "FILE")]
        preds: PathBuf,
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Estimate kappa as the mean pair count of this real manifest.
        #[arg(long, value_name = "FILE", conflicts_with = "kappa")]
        kappa_from: Option<PathBuf>,
    },
    /// Print the interaction threshold for a prediction dump.
    Threshold {
        #[arg(long, value_name = "FILE")]
        preds: PathBuf,
        /// Number of curated images; defaults to the images in the dump.
        #[arg(long)]
        nv: Option<usize>,
        #[arg(long, value_name = "FILE", conflicts_with = "kappa")]
        kappa_from: Option<PathBuf>,
    },
    /// Train the toy detector, with curated images when given.
    TrainToy {
        #[arg(long, value_name = "FILE")]
        manifest_real: PathBuf,
        #[arg(long, value_name = "FILE")]
        manifest_virtual: Option<PathBuf>,
        /// Start from this checkpoint's student.
        #[arg(long, value_name = "FILE")]
        init: Option<PathBuf>,
        /// Test manifest for the recall report.
        #[arg(long, value_name = "FILE")]
        eval: Option<PathBuf>,
        /// Frequency table naming the rare categories for the report.
        #[arg(long, value_name = "FILE")]
        freq: Option<PathBuf>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Per-category counts, long-tail histogram and budget audit.
    Stats {
        #[arg(long, value_name = "FILE")]
        manifest: PathBuf,
        #[arg(long, value_name = "FILE")]
        freq: PathBuf,
        /// Report file; stdout when absent.
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::ToyData { .. } => "toy-data",
            Command::Prompts { .. } => "prompts",
            Command::Generate { .. } => "generate",
            Command::Filter { .. } => "filter",
            Command::PredictToy { .. } => "predict-toy",
            Command::Amf { .. } => "amf",
            Command::Threshold { .. } => "threshold",
            Command::TrainToy { .. } => "train-toy",
            Command::Stats { .. } => "stats",
        }
    }
}

fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::InvalidConfig => 3,
        ErrorCategory::MissingFile => 4,
        ErrorCategory::Data => 5,
        ErrorCategory::Backend => 6,
        ErrorCategory::Pipeline => 7,
    }
}

fn run(cli: Cli) -> vil_core::Result<()> {
    let ctx = Context::build(&cli.global, cli.command.name())?;
    match cli.command {
        Command::ToyData { out } => commands::toy_data(&ctx, &out),
        Command::Prompts { freq, out } => commands::prompts(&ctx, freq.as_deref(), &out),
        Command::Generate { freq, real_manifest, out } => {
            commands::generate(&ctx, freq.as_deref(), &real_manifest, &out)
        }
        Command::Filter { manifest, real_manifest, out } => commands::filter(&ctx, &manifest, &real_manifest, &out),
        Command::PredictToy { checkpoint, manifest, out, student } => {
            commands::predict_toy(&ctx, &checkpoint, &manifest, &out, student)
        }
        Command::Amf { preds, manifest, out, kappa_from } => {
            commands::amf(&ctx, &preds, &manifest, &out, kappa_from.as_deref())
        }
        Command::Threshold { preds, nv, kappa_from } => commands::threshold(&ctx, &preds, nv, kappa_from.as_deref()),
        Command::TrainToy {
            manifest_real,
            manifest_virtual,
            init,
            eval,
            freq,
            out,
        } => commands::train_toy(
            &ctx,
            commands::TrainInputs {
                real: &manifest_real,
                curated: manifest_virtual.as_deref(),
                init: init.as_deref(),
                eval: eval.as_deref(),
                freq: freq.as_deref(),
            },
            &out,
        ),
        Command::Stats { manifest, freq, out } => commands::stats(&ctx, &manifest, &freq, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(e.category()))
        }
    }
}
