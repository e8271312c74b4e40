//! `msnn`: train, evaluate and explain the lung-CT classifier.

mod commands;
mod record;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use msnn::data::WindowParams;
use serde::Serialize;

#[derive(Debug, Parser)]
#[command(name = "msnn", version, about = "Lung-CT cancer classifier with k-NN head and occlusion maps")]
pub struct Cli {
    /// Worker threads for batch forward passes and occlusion.
    #[arg(long, global = true, env = "MSNN_THREADS")]
    threads: Option<usize>,

    /// Also write the run record JSON to this file.
    #[arg(long, global = true)]
    record: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train on a manifest and write checkpoint, curves and split plan.
    Train(TrainArgs),
    /// Score a checkpoint on the held-out part of a split plan.
    Eval(EvalArgs),
    /// Occlusion sensitivity map, overlay and caption for one image.
    Explain(ExplainArgs),
    /// SSE-versus-k curve for the k-NN head.
    Elbow(ElbowArgs),
    /// Dump penultimate-layer feature vectors as CSV.
    Features(FeaturesArgs),
    /// Tile the first-channel weights of one convolution.
    Filters(FiltersArgs),
    /// Tile the activations of one convolution stage for an image.
    Featmaps(FeatmapsArgs),
    /// Generate a synthetic corpus with a manifest.
    Synth(SynthArgs),
    /// Print the layer table with output shapes and parameter counts.
    Paramtable(ParamtableArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossArg {
    Mse,
    CrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Head {
    Softmax,
    Knn,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subset {
    Train,
    Test,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetArg {
    Predicted,
    Cancerous,
    NonCancerous,
}

/// Display window for DICOM inputs.
#[derive(Debug, Clone, Args, Serialize)]
pub struct WindowArg {
    /// Window as `center,width` in HU; overrides the file's window tags.
    #[arg(long, value_parser = parse_window)]
    pub window: Option<WindowParams>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    pub manifest: PathBuf,
    /// Fraction of each class used for training.
    #[arg(long, default_value_t = 0.75, value_parser = parse_fraction)]
    pub split: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, default_value_t = 20)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, value_enum, default_value_t = LossArg::Mse)]
    pub loss: LossArg,
    /// Expected image extent; defaults to the extent of the images.
    #[arg(long)]
    pub extent: Option<usize>,
    /// Validation cadence in iterations.
    #[arg(long, default_value_t = 10)]
    pub val_every: usize,
    /// Checkpoint path; curves and split plan are written next to it.
    #[arg(long, default_value = "model.msnn")]
    pub out: PathBuf,
    #[command(flatten)]
    pub window: WindowArg,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    /// Split plan JSON written by `train`.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Head::Both)]
    pub head: Head,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Output prefix for the JSON report and ROC CSVs; defaults to the
    /// checkpoint path without extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub window: WindowArg,
}

#[derive(Debug, Args, Serialize)]
pub struct ExplainArgs {
    pub checkpoint: PathBuf,
    pub image: PathBuf,
    /// Mask side in pixels; defaults to one eighth of the extent.
    #[arg(long)]
    pub mask_size: Option<usize>,
    /// Mask step in pixels; defaults to half the mask size.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Normalized intensity painted inside the mask.
    #[arg(long, default_value_t = 0.5)]
    pub mask_value: f32,
    /// Class whose probability drop is mapped.
    #[arg(long, value_enum, default_value_t = TargetArg::Predicted)]
    pub target: TargetArg,
    /// Heat overlay opacity.
    #[arg(long, default_value_t = 0.4)]
    pub alpha: f64,
    /// Also write the upsampled map as a grayscale PGM.
    #[arg(long)]
    pub gray: bool,
    /// Output prefix; defaults to the image path without extension.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub window: WindowArg,
}

#[derive(Debug, Args, Serialize)]
pub struct ElbowArgs {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    #[arg(long)]
    pub plan: Option<PathBuf>,
    /// Candidate k values, strictly increasing.
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,7,9")]
    pub k: Vec<usize>,
    #[arg(long, default_value = "elbow.csv")]
    pub out: PathBuf,
    #[command(flatten)]
    pub window: WindowArg,
}

#[derive(Debug, Args, Serialize)]
pub struct FeaturesArgs {
    pub checkpoint: PathBuf,
    pub manifest: PathBuf,
    /// Needed unless `--subset all`.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Subset::All)]
    pub subset: Subset,
    #[arg(long, default_value = "features.csv")]
    pub out: PathBuf,
    #[command(flatten)]
    pub window: WindowArg,
}

#[derive(Debug, Args, Serialize)]
pub struct FiltersArgs {
    pub checkpoint: PathBuf,
    /// Convolution number, 1-based.
    #[arg(long, default_value_t = 1)]
    pub layer: usize,
    #[arg(long, default_value = "filters.pgm")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct FeatmapsArgs {
    pub checkpoint: PathBuf,
    pub image: PathBuf,
    /// Convolution stage, 1-based.
    #[arg(long, default_value_t = 1)]
    pub layer: usize,
    #[arg(long, default_value = "featmaps.pgm")]
    pub out: PathBuf,
    #[command(flatten)]
    pub window: WindowArg,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    pub pos: usize,
    #[arg(long, default_value_t = 100)]
    pub neg: usize,
    #[arg(long, default_value_t = 64)]
    pub extent: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long, default_value = "synth")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ParamtableArgs {
    #[arg(long, default_value_t = 512)]
    pub extent: usize,
    /// Print JSON instead of a text table.
    #[arg(long)]
    pub json: bool,
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let f: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if f > 0.0 && f < 1.0 {
        Ok(f)
    } else {
        Err(format!("split fraction {f} must lie strictly between 0 and 1"))
    }
}

fn parse_window(s: &str) -> Result<WindowParams, String> {
    let (c, w) = s.split_once(',').ok_or("expected center,width")?;
    let center: f64 = c.trim().parse().map_err(|_| format!("bad window center {c:?}"))?;
    let width: f64 = w.trim().parse().map_err(|_| format!("bad window width {w:?}"))?;
    if !(width > 0.0) {
        return Err(format!("window width {width} must be positive"));
    }
    Ok(WindowParams { center, width })
}

/// Usage errors exit 1, unreadable or malformed data 2, non-finite numerics 3.
fn exit_code(e: &msnn::Error) -> u8 {
    match e {
        msnn::Error::NonFinite(_) => 3,
        e if e.is_data_error() => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("global pool is configured once");
    }
    let start = Instant::now();
    let mut rec = commands::record_for(&cli.command);
    let outcome = commands::run(&cli.command, &mut rec);
    rec.wall_time_secs = start.elapsed().as_secs_f64();
    let code = match &outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            rec.status = "error";
            rec.error = Some(e.to_string());
            exit_code(e)
        }
    };
    let line = rec.to_json_line();
    eprintln!("{line}");
    if let Some(path) = &cli.record {
        if let Err(e) = std::fs::write(path, format!("{line}\n")) {
            eprintln!("error: cannot write run record {}: {e}", path.display());
            return ExitCode::from(2);
        }
    }
    ExitCode::from(code)
}
