//! `aerial-parse`: synthesize data, train, parse rasters and evaluate.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  internal error
  2  configuration error (invalid or missing field, bad flag value)
  3  data error (unreadable or malformed input, extent mismatch)
  4  numeric error (non-finite loss or gradient during training)
  5  checkpoint mismatch (class table, task or input size differs)

Environment overrides (paths and worker count only):
  AERIAL_PARSE_TAXONOMY, AERIAL_PARSE_TRAIN_MANIFEST, AERIAL_PARSE_AUX_MANIFEST,
  AERIAL_PARSE_AUX_TAXONOMY, AERIAL_PARSE_CHECKPOINT, AERIAL_PARSE_BASE_CHECKPOINT,
  AERIAL_PARSE_TRACE, AERIAL_PARSE_WORKERS";

#[derive(Parser, Debug)]
#[command(name = "aerial-parse", version, about = "Pixel-wise semantic labeling of aerial rasters", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic texture tiles or labelled scenes.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Train a network from the manifests named in the config.
    Train(ConfigArgs),
    /// Fine-tune new heads on top of `paths.base_checkpoint`.
    Finetune(ConfigArgs),
    /// Label every pixel of a raster.
    Parse(ParseArgs),
    /// Class-agnostic segmentation of a raster.
    Segment(SegmentArgs),
    /// Classify the tiles of a manifest with a trained checkpoint.
    Classify(ClassifyArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
}

#[derive(Subcommand, Debug)]
pub enum SynthCommand {
    /// Texture tiles with a flat taxonomy and a manifest.
    Tiles(SynthTilesArgs),
    /// A Voronoi scene raster (P6) with its label map (P5).
    Scene(SynthSceneArgs),
}

#[derive(Args, Debug)]
pub struct ConfigArgs {
    /// Pipeline configuration (TOML).
    #[arg(short, long)]
    pub config: PathBuf,
}

#[derive(Args, Debug)]
pub struct ClassSelection {
    /// Number of texture classes.
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    /// Use a random texture family with this seed instead of the built-in palette.
    #[arg(long)]
    pub family_seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SynthTilesArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub classes: ClassSelection,
    /// Tiles per class.
    #[arg(long, default_value_t = 200)]
    pub per_class: usize,
    /// Long-tail class counts with this exponent (same total as --per-class).
    #[arg(long)]
    pub long_tail: Option<f64>,
    #[arg(long, default_value_t = 32)]
    pub tile_size: usize,
    /// Render sides, one picked at random per tile.
    #[arg(long, value_delimiter = ',', default_value = "32,64,128")]
    pub sources: Vec<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct SynthSceneArgs {
    /// Scene raster (P6).
    #[arg(long)]
    pub raster: PathBuf,
    /// Label map (P5).
    #[arg(long)]
    pub truth: PathBuf,
    #[command(flatten)]
    pub classes: ClassSelection,
    #[arg(long, default_value_t = 512)]
    pub width: usize,
    #[arg(long, default_value_t = 512)]
    pub height: usize,
    /// Voronoi sites.
    #[arg(long, default_value_t = 16)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct ParseArgs {
    /// Pipeline configuration (TOML); defaults apply when omitted.
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    /// Input raster (P6).
    #[arg(short, long)]
    pub input: PathBuf,
    /// Output label map (P5).
    #[arg(short, long)]
    pub output: PathBuf,
    /// Classify with the ground truth at each grid centre instead of a checkpoint.
    #[arg(long, value_name = "TRUTH_P5")]
    pub oracle: Option<PathBuf>,
    /// With --oracle: use the truth's connected components as regions.
    #[arg(long, requires = "oracle")]
    pub true_regions: bool,
    /// With --oracle: class count (defaults to the largest truth label + 1).
    #[arg(long, requires = "oracle")]
    pub classes: Option<usize>,
    /// Also write the semantic grid map (P5 plus JSON sidecar).
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Also write the region map (P5 plus JSON sidecar).
    #[arg(long)]
    pub regions: Option<PathBuf>,
    /// Parse-stage threads (overrides config and environment).
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Args, Debug)]
pub struct SegmentArgs {
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    #[arg(short, long)]
    pub input: PathBuf,
    /// Region map (P5 plus JSON sidecar).
    #[arg(short, long)]
    pub output: PathBuf,
    #[arg(long)]
    pub k: Option<f64>,
    #[arg(long)]
    pub min_size: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub target_count: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ClassifyArgs {
    #[arg(short, long)]
    pub config: PathBuf,
    /// Tiles to classify.
    #[arg(short, long)]
    pub manifest: PathBuf,
    /// Predictions TSV: `id, index, name` per tile, or `id, scores...` for a multi-label task.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Task head (defaults to `model.task`).
    #[arg(long)]
    pub task: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum EvalMode {
    /// Label rasters (P5).
    Pixel,
    /// Classify predictions TSV against a manifest.
    Tile,
    /// Multi-label scores TSV against a manifest's expanded labels.
    Multilabel,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Table,
    Json,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(short, long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: EvalMode,
    #[arg(long)]
    pub pred: PathBuf,
    /// Truth raster (pixel) or manifest (tile, multilabel).
    #[arg(long)]
    pub truth: PathBuf,
    /// Class table for tile modes (defaults to the manifest's reference).
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Pixel mode class count (defaults to the largest label + 1).
    #[arg(long)]
    pub classes: Option<usize>,
    /// Pixel mode truth label excluded from the metrics.
    #[arg(long)]
    pub void: Option<usize>,
    /// Multi-label decision threshold (overrides `eval.tau`).
    #[arg(long)]
    pub tau: Option<f64>,
    /// JSON report file.
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
    pub format: ReportFormat,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(SynthCommand::Tiles(a)) => commands::synth_tiles(&a),
        Command::Synth(SynthCommand::Scene(a)) => commands::synth_scene(&a),
        Command::Train(a) => commands::train(&a.config, false),
        Command::Finetune(a) => commands::train(&a.config, true),
        Command::Parse(a) => commands::parse(&a),
        Command::Segment(a) => commands::segment(&a),
        Command::Classify(a) => commands::classify(&a),
        Command::Eval(a) => commands::eval(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
