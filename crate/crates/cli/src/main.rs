mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Camera-conditioned multi-view video toolkit: ray embeddings, pose algebra,
/// data reformatting and curation, toy EDM sampling and evaluation metrics.
#[derive(Parser, Debug)]
#[command(name = "camvid", version)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Seed for every stochastic step.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Worker threads for per-item work. Output does not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,

    /// Primary output file (stdout when omitted, except for tensors).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Pin every configurable constant to its documented default and print
    /// the constants to stderr.
    #[arg(long, global = true)]
    pub paper_defaults: bool,

    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Plücker ray grids for every pose in a pose file, as an (N, 6, h, w) tensor.
    Plucker(PluckerArgs),
    /// Re-anchor a pose file at one frame, optionally normalizing scale.
    Relativize(RelativizeArgs),
    /// Generate a random smooth orbit trajectory as a pose file.
    TrajGen(TrajGenArgs),
    /// Split a static video into a multi-view frame assignment.
    Reformat(ReformatArgs),
    /// Run the curation filters over a clip manifest.
    Curate(CurateArgs),
    /// Label camera motion from optical-flow tensors.
    ClassifyMotion(ClassifyMotionArgs),
    /// Rotation/translation angular errors and AUC between two pose files.
    EvalPose(EvalPoseArgs),
    /// Epipolar precision and matching score of a match set.
    EvalEpipolar(EvalEpipolarArgs),
    /// Fréchet distance between two feature-statistics tensors.
    EvalFrechet(EvalFrechetArgs),
    /// Sample a Gaussian or Gaussian-mixture toy with the PF-ODE sampler.
    SampleToy(SampleToyArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum RayModeArg {
    Standard,
    PaperLiteral,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum SamplingArg {
    Center,
    Corner,
}

#[derive(Args, Debug)]
pub struct PluckerArgs {
    pub poses: PathBuf,
    /// Image width in pixels.
    #[arg(long)]
    pub width: usize,
    /// Image height in pixels.
    #[arg(long)]
    pub height: usize,
    /// Grid height (defaults to the image height).
    #[arg(long)]
    pub grid_h: Option<usize>,
    /// Grid width (defaults to the image width).
    #[arg(long)]
    pub grid_w: Option<usize>,
    #[arg(long, value_enum, default_value = "standard")]
    pub mode: RayModeArg,
    #[arg(long, value_enum, default_value = "center")]
    pub sampling: SamplingArg,
    /// Express poses relative to the first frame first.
    #[arg(long)]
    pub relative: bool,
    /// Re-orthonormalize slightly non-orthonormal rotations.
    #[arg(long)]
    pub repair: bool,
}

#[derive(Args, Debug)]
pub struct RelativizeArgs {
    pub poses: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub anchor: usize,
    /// Scale camera centers so the farthest one is at distance 1.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long)]
    pub repair: bool,
}

#[derive(Args, Debug)]
pub struct TrajGenArgs {
    /// JSON trajectory config; flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub sweep: Option<f64>,
    #[arg(long)]
    pub start_azimuth: Option<f64>,
    #[arg(long)]
    pub start_elevation: Option<f64>,
    #[arg(long)]
    pub azimuth_noise: Option<f64>,
    /// Normalized intrinsics fx,fy,cx,cy written to every frame.
    #[arg(long, value_delimiter = ',', num_args = 4, default_values_t = [1.0, 1.0, 0.5, 0.5])]
    pub intrinsics: Vec<f64>,
    /// Also write the per-frame azimuth/elevation as JSON.
    #[arg(long)]
    pub angles: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum SchemeArg {
    Blocks,
    Interleave,
    Pivot,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum SourceKindArg {
    StaticScene,
    Monocular,
    DynamicRender,
}

#[derive(Args, Debug)]
pub struct ReformatArgs {
    #[arg(long)]
    pub source_len: usize,
    /// Frames per view.
    #[arg(long)]
    pub frames: usize,
    #[arg(long)]
    pub views: usize,
    #[arg(long, value_enum, default_value = "blocks")]
    pub scheme: SchemeArg,
    /// Fixed stride.
    #[arg(long, conflicts_with = "source_kind")]
    pub stride: Option<usize>,
    /// Sample the stride from this source kind's range using --seed.
    #[arg(long, value_enum)]
    pub source_kind: Option<SourceKindArg>,
    /// Apply time-reversal augmentation.
    #[arg(long)]
    pub reverse: bool,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageArg {
    SfmRegistration,
    PointCount,
    Ocr,
    Aesthetic,
    Motion,
}

#[derive(Args, Debug)]
pub struct CurateArgs {
    pub manifest: PathBuf,
    /// Write the stage-count report here (stderr otherwise).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Stage order, comma separated.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub order: Option<Vec<StageArg>>,
    #[arg(long)]
    pub min_points: Option<u64>,
    #[arg(long)]
    pub max_points: Option<u64>,
    #[arg(long)]
    pub max_text_fraction: Option<f64>,
    #[arg(long)]
    pub min_aesthetic: Option<f64>,
}

#[derive(Args, Debug)]
pub struct ClassifyMotionArgs {
    /// One (H, W, 2) flow tensor per frame pair.
    #[arg(required = true)]
    pub flows: Vec<PathBuf>,
    #[arg(long)]
    pub static_threshold: Option<f64>,
    #[arg(long)]
    pub zoom_threshold: Option<f64>,
    #[arg(long)]
    pub dominance: Option<f64>,
    #[arg(long)]
    pub invert_pan_tilt: bool,
}

#[derive(Args, Debug)]
pub struct EvalPoseArgs {
    pub pred: PathBuf,
    pub gt: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub anchor: usize,
    /// AUC thresholds in degrees, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    /// Single AUC over max(rotation, translation) error.
    #[arg(long)]
    pub combined: bool,
    /// Reconstruction outcome file (`<id> ok|fail` lines) for the failure rate.
    #[arg(long)]
    pub colmap_results: Option<PathBuf>,
    #[arg(long)]
    pub repair: bool,
}

#[derive(Args, Debug)]
pub struct EvalEpipolarArgs {
    pub matches: PathBuf,
    pub poses: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub view_a: usize,
    #[arg(long, default_value_t = 1)]
    pub view_b: usize,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub repair: bool,
}

#[derive(Args, Debug)]
pub struct EvalFrechetArgs {
    /// Two packed (d+1, d) tensors, or mean_a cov_a mean_b cov_b.
    #[arg(required = true, num_args = 2..=4)]
    pub stats: Vec<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
pub enum MethodArg {
    Euler,
    Heun,
}

#[derive(Args, Debug)]
pub struct SampleToyArgs {
    /// Target mean, one value per dimension.
    #[arg(long, value_delimiter = ',', default_values_t = [0.0], allow_negative_numbers = true)]
    pub mu: Vec<f64>,
    /// Target standard deviation.
    #[arg(long, default_value_t = 1.0)]
    pub s: f64,
    /// Mixture config JSON (`{"components":[{"weight":w,"mu":[..],"s":s}]}`); replaces --mu/--s.
    #[arg(long)]
    pub mixture: Option<PathBuf>,
    /// Number of draws.
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long, value_enum, default_value = "heun")]
    pub method: MethodArg,
    /// Write the terminal states as an (n, dim) tensor.
    #[arg(long)]
    pub states: Option<PathBuf>,
}

/// Argument combinations clap cannot express; exit status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let level = match cli.global.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).init();

    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is::<UsageError>() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
