//! `shapemorph` command line: deviation extraction, key-point selection,
//! parameter fitting, conditional simulation and batch statistics, all driven
//! by files.

mod commands;
mod session;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use shapemorph::{Error, ErrorKind};

pub use session::SessionManifest;

pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_IO: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Version written into every JSON file this tool produces.
pub const SCHEMA: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "shapemorph", version, about = "Non-ideal part shapes from Gaussian random fields")]
pub struct Cli {
    /// Worker threads for the numerical kernels (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Directory that receives the outputs.
    #[arg(long, global = true, default_value = ".")]
    pub output_dir: PathBuf,

    #[arg(long, global = true, default_value = "warn")]
    pub log_level: log::LevelFilter,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normal deviation of every mesh node from a scan or a displacement field.
    Deviation(DeviationArgs),
    /// Voxel-based key-point selection.
    Keypoints(KeypointArgs),
    /// Maximum-likelihood kernel parameters from a measured deviation field.
    Fit(FitArgs),
    /// Conditional simulation of an ensemble of part instances.
    Simulate(SimulateArgs),
    /// Gaussian model of fitted correlation lengths across a batch of parts.
    Batch(BatchArgs),
    /// Convert a deviation field for external plotting tools.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct DeviationArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    /// Pre-aligned cloud of points (PLY, OBJ or xyz text).
    #[arg(long, conflicts_with = "displacement", required_unless_present = "displacement")]
    pub cop: Option<PathBuf>,
    /// Per-node displacement rows `dx dy dz`.
    #[arg(long)]
    pub displacement: Option<PathBuf>,
    /// Search radius (mm) around each node for scan points.
    #[arg(long, default_value_t = 5.0)]
    pub max_dist: f64,
    /// Output file stem (default: `<mesh stem>_dev`).
    #[arg(long)]
    pub name: Option<String>,
}

#[derive(Debug, Args)]
pub struct KeypointArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    /// Voxel edge length (mm).
    #[arg(long)]
    pub voxel_size: f64,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    /// Deviation PLY written by `deviation`.
    #[arg(long)]
    pub deviation: PathBuf,
    /// Key points written by `keypoints`.
    #[arg(long, conflicts_with = "voxel_size", required_unless_present = "voxel_size")]
    pub keypoints: Option<PathBuf>,
    #[arg(long)]
    pub voxel_size: Option<f64>,
    /// Kernel family; several may be given for a sum of terms.
    #[arg(long, value_delimiter = ',', default_value = "matern52")]
    pub family: Vec<shapemorph::kernels::Family>,
    /// Number of leading coordinates the kernel acts on.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub dim: u8,
    #[arg(long, default_value_t = 4)]
    pub restarts: usize,
    #[arg(long, default_value_t = 200)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub grad_tol: f64,
    /// Diagonal stabilization relative to the data variance.
    #[arg(long, default_value_t = 1e-8)]
    pub jitter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    /// Dense Cholesky up to the dense limit, reduced rank beyond it.
    Auto,
    Cholesky,
    Eigen,
    Reduced,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Session manifest naming the mesh, key points, spec and scenarios.
    #[arg(long, conflicts_with_all = ["mesh", "spec", "keypoints", "scenario"])]
    pub session: Option<PathBuf>,
    #[arg(long, required_unless_present = "session")]
    pub mesh: Option<PathBuf>,
    /// Fitted kernel (output of `fit`) or a bare kernel spec.
    #[arg(long, required_unless_present = "session")]
    pub spec: Option<PathBuf>,
    #[arg(long, required_unless_present = "session")]
    pub keypoints: Option<PathBuf>,
    /// Scenario JSON: bend, patch, form_only or manual.
    #[arg(long, required_unless_present = "session")]
    pub scenario: Option<PathBuf>,
    /// Upper specification limit |USL| (mm); the lower limit is symmetric.
    #[arg(long)]
    pub usl: f64,
    /// Probability that a node lies inside the limits.
    #[arg(long)]
    pub p: f64,
    #[arg(long, default_value_t = 4)]
    pub count: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::Auto)]
    pub method: MethodArg,
    /// Retained eigenvalue fraction for the reduced-rank sampler.
    #[arg(long, default_value_t = 0.99)]
    pub energy: f64,
}

#[derive(Debug, Args)]
pub struct BatchArgs {
    /// Fit results of the batch.
    #[arg(required = true, num_args = 1..)]
    pub fits: Vec<PathBuf>,
    /// Fit results of a second batch to test against.
    #[arg(long, num_args = 1..)]
    pub compare: Vec<PathBuf>,
    /// Draw this many kernel specs from the batch model.
    #[arg(long, default_value_t = 0)]
    pub sample: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Vtk,
    Csv,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub mesh: PathBuf,
    /// Deviation PLY (measured field, ensemble instance or mean).
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long, value_enum, default_value_t = ExportFormat::Vtk)]
    pub format: ExportFormat,
}

/// Message and process exit code of a failed command.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_VALIDATION,
            message: message.into(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e.kind() {
            ErrorKind::Validation => EXIT_VALIDATION,
            ErrorKind::Io => EXIT_IO,
            ErrorKind::Numerical => EXIT_NUMERICAL,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, Failure>;

pub fn run(cli: Cli) -> CliResult<()> {
    env_logger::Builder::new().filter_level(cli.log_level).try_init().ok();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::validation("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::validation(e.to_string()))?;
    }
    std::fs::create_dir_all(&cli.output_dir).map_err(|e| Error::Io {
        path: cli.output_dir.clone(),
        source: e,
    })?;
    let ctx = Context {
        seed: cli.seed,
        out: cli.output_dir,
    };
    match cli.command {
        Command::Deviation(a) => commands::deviation(&ctx, &a),
        Command::Keypoints(a) => commands::keypoints(&ctx, &a),
        Command::Fit(a) => commands::fit(&ctx, &a),
        Command::Simulate(a) => commands::simulate(&ctx, &a),
        Command::Batch(a) => commands::batch(&ctx, &a),
        Command::Export(a) => commands::export(&ctx, &a),
    }
}

pub(crate) struct Context {
    pub seed: u64,
    pub out: PathBuf,
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    text.push('\n');
    shapemorph::io::write_file(path, text)?;
    println!("wrote {}", path.display());
    Ok(())
}

pub(crate) fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| {
        Failure::from(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}
