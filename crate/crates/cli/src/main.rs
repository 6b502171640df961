mod commands;
mod remote;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dvg_core::energy::EnergyParams;
use dvg_core::optimizer::ScheduleParams;
use dvg_core::registration::WarpMethod;
use dvg_core::shape_io::{ShapeFormat, DEFAULT_MARGIN, DEFAULT_SAMPLE_COUNT};
use serde::Serialize;
use thiserror::Error;

/// Fit deformable voxel grids to shapes and use them for cubification,
/// style transfer, correspondences, retrieval and PCA deformation.
#[derive(Debug, Parser)]
#[command(name = "dvg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit a hierarchical grid to a shape; writes model.json, trace.csv and config.json.
    Fit(FitArgs),
    /// Warp a shape so that its grid becomes the regular lattice.
    Cubify(CubifyArgs),
    /// Project a shape fitted by one grid into another grid.
    Transfer(TransferArgs),
    /// Nearest-neighbor correspondences between two cubified point sets.
    Match(MatchArgs),
    /// Write descriptor records (JSON lines) for fitted models.
    Describe(DescribeArgs),
    /// Find the nearest descriptors in a database.
    Search(SearchArgs),
    /// Principal modes of a collection of fitted grids.
    PcaFit(PcaFitArgs),
    /// Deform a shape along PCA modes of its grid.
    PcaDeform(PcaDeformArgs),
    /// Write a synthetic test mesh.
    Synth(SynthArgs),
    /// Query a running editor service.
    Remote(remote::RemoteArgs),
}

/// How a shape file is read and placed in the unit cube.
#[derive(Debug, Clone, Args, Serialize)]
pub struct ShapeOpts {
    /// Input format (obj, ply, xyz); inferred from the extension by default.
    #[arg(long)]
    pub format: Option<ShapeFormat>,
    /// Margin left on each side when normalizing into the unit cube.
    #[arg(long, default_value_t = DEFAULT_MARGIN)]
    pub margin: f64,
    /// Surface samples drawn from meshes.
    #[arg(long, default_value_t = DEFAULT_SAMPLE_COUNT)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EnergyOpts {
    #[arg(long, default_value_t = 1.0)]
    pub lambda_e: f64,
    #[arg(long, default_value_t = 0.4)]
    pub lambda_b: f64,
    #[arg(long, default_value_t = 4.0)]
    pub lambda_i: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub beta: f64,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub gamma: f64,
    /// Covering ball radius; defaults to the cell half-diagonal over s at each level.
    #[arg(long)]
    pub ball_radius: Option<f64>,
    /// Sigmoid stiffness; defaults to 20 / ball radius.
    #[arg(long)]
    pub stiffness: Option<f64>,
    /// Balls per cell along each axis.
    #[arg(long, default_value_t = 2)]
    pub covering_s: usize,
}

impl EnergyOpts {
    pub fn params(&self) -> EnergyParams {
        EnergyParams {
            lambda_e: self.lambda_e,
            lambda_b: self.lambda_b,
            lambda_i: self.lambda_i,
            alpha: self.alpha,
            beta: self.beta,
            gamma: self.gamma,
            ball_radius: self.ball_radius,
            stiffness: self.stiffness,
            covering_s: self.covering_s,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ScheduleOpts {
    /// Finest level p; the final grid has resolution 2^p.
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    /// Descent steps per level.
    #[arg(long, default_value_t = 300)]
    pub steps: usize,
    #[arg(long, default_value_t = 5e-3)]
    pub step_size: f64,
    /// Comma-separated fading factors for levels 1..=p (default all 1).
    #[arg(long, value_delimiter = ',')]
    pub fading: Option<Vec<f64>>,
    /// Stop a level after 10 consecutive steps improving less than this.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

impl ScheduleOpts {
    pub fn params(&self, seed: u64) -> ScheduleParams {
        ScheduleParams {
            max_level: self.levels,
            steps_per_level: self.steps,
            step_size: self.step_size,
            fading: self.fading.clone().unwrap_or_else(|| vec![1.0; self.levels]),
            convergence_tol: self.tol,
            seed,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct WarpOpts {
    #[arg(long, default_value = "tps")]
    pub method: WarpMethod,
    /// TPS ridge; defaults to 1e-8 times the control point count.
    #[arg(long)]
    pub tps_lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    pub shape: PathBuf,
    pub out: PathBuf,
    #[command(flatten)]
    pub shape_opts: ShapeOpts,
    #[command(flatten)]
    pub energy: EnergyOpts,
    #[command(flatten)]
    pub schedule: ScheduleOpts,
}

#[derive(Debug, Args)]
pub struct CubifyArgs {
    /// Fitted model (or bare grid) JSON.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub shape: PathBuf,
    /// Output .obj (mesh) or .xyz (sample points).
    #[arg(long)]
    pub out: PathBuf,
    /// Use this level of the model instead of the finest.
    #[arg(long)]
    pub level: Option<usize>,
    #[command(flatten)]
    pub warp: WarpOpts,
    #[command(flatten)]
    pub shape_opts: ShapeOpts,
}

#[derive(Debug, Args)]
pub struct TransferArgs {
    /// Model fitted to the shape.
    #[arg(long)]
    pub source: PathBuf,
    /// Model whose grid receives the shape.
    #[arg(long)]
    pub target: PathBuf,
    #[arg(long)]
    pub shape: PathBuf,
    /// Output .obj (mesh) or .xyz (sample points).
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub warp: WarpOpts,
    #[command(flatten)]
    pub shape_opts: ShapeOpts,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    /// Cubified source points.
    #[arg(long)]
    pub source: PathBuf,
    /// Cubified target points.
    #[arg(long)]
    pub target: PathBuf,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    /// Model (or grid) JSON files.
    #[arg(required = true)]
    pub models: Vec<PathBuf>,
    /// Comma-separated ids, one per model; file stems by default.
    #[arg(long, value_delimiter = ',')]
    pub ids: Option<Vec<String>>,
    /// JSON-lines output; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    /// Descriptor record, model or grid JSON.
    #[arg(long)]
    pub query: PathBuf,
    /// Descriptor database (JSON lines).
    #[arg(long)]
    pub db: PathBuf,
    #[arg(short, long, default_value_t = 2)]
    pub k: usize,
    /// Result file (`id<TAB>distance` lines); stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PcaFitArgs {
    /// Model (or grid) JSON files, all at the same resolution.
    #[arg(required = true)]
    pub models: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PcaDeformArgs {
    #[arg(long)]
    pub pca: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub shape: PathBuf,
    /// Comma-separated coefficients in standard deviations.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub coeffs: Vec<f64>,
    /// Output .obj (mesh) or .xyz (sample points).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the deformed grid JSON here.
    #[arg(long)]
    pub grid_out: Option<PathBuf>,
    #[command(flatten)]
    pub shape_opts: ShapeOpts,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(subcommand)]
    pub kind: SynthKind,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthKind {
    /// Latitude/longitude sphere centered in the unit cube.
    Sphere {
        #[arg(long, default_value_t = 0.35)]
        radius: f64,
        #[arg(long, default_value_t = 24)]
        rings: usize,
        #[arg(long, default_value_t = 48)]
        segments: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Axis-aligned box centered in the unit cube.
    Box {
        /// Side lengths x,y,z.
        #[arg(long, value_delimiter = ',', required = true)]
        size: Vec<f64>,
        /// Quads per face edge.
        #[arg(long, default_value_t = 4)]
        divisions: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments or unreadable input (exit code 2).
    #[error("{0}")]
    Input(String),
    /// Failure while computing or writing results (exit code 1).
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn input(e: impl std::fmt::Display) -> Self {
        Self::Input(e.to_string())
    }

    pub fn runtime(e: impl std::fmt::Display) -> Self {
        Self::Runtime(e.to_string())
    }

    fn kind(&self) -> &'static str {
        match self {
            Self::Input(_) => "input",
            Self::Runtime(_) => "runtime",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            Self::Input(_) => 2,
            Self::Runtime(_) => 1,
        }
    }
}

fn report(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{line}");
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            report("usage", first.trim_start_matches("error: "));
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Fit(a) => commands::fit(&a),
        Command::Cubify(a) => commands::cubify(&a),
        Command::Transfer(a) => commands::transfer(&a),
        Command::Match(a) => commands::match_points(&a),
        Command::Describe(a) => commands::describe(&a),
        Command::Search(a) => commands::search(&a),
        Command::PcaFit(a) => commands::pca_fit(&a),
        Command::PcaDeform(a) => commands::pca_deform(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Remote(a) => remote::run(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(e.kind(), &e.to_string());
            ExitCode::from(e.exit_code())
        }
    }
}
