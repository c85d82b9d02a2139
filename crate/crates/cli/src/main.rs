//! `stochseg`: segmentation runs, evaluation, bounds, sweeps and the
//! random-graph lab.
//!
//! Exit codes: 0 success, 1 unexpected failure, 2 missing input file,
//! 3 scribbles missing a class, 4 invalid arguments or configuration.

mod eval;
mod lab;
mod segment;
mod sweep;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stochseg::divergence::{ConnectivityMode, DivergenceKind};
use stochseg::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "stochseg",
    version,
    about = "Scribble segmentation with stochastically sampled long-range cliques"
)]
struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Segment one image from a scribble file.
    Segment(segment::SegmentArgs),
    /// Score predicted masks against ground truth.
    Eval(eval::EvalArgs),
    /// Print the connectedness and cut-preservation bounds for n nodes.
    Bounds(lab::BoundsArgs),
    /// Run a parameter grid on one image and score each point.
    Sweep(sweep::SweepArgs),
    /// Monte-Carlo connectivity of G(n, p).
    GraphLab(lab::GraphLabArgs),
}

/// Configuration file plus per-flag overrides.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// TOML run configuration; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// bregman, kl or hellinger.
    #[arg(long)]
    pub divergence: Option<DivergenceKind>,
    /// similarity or literal.
    #[arg(long)]
    pub mode: Option<ConnectivityMode>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Target long-range cliques per node.
    #[arg(long)]
    pub degree: Option<f64>,
    /// Cluster count.
    #[arg(long)]
    pub q: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    /// Tolerance for the cut-preservation bound in reports.
    #[arg(long)]
    pub epsilon: Option<f64>,
}

impl RunArgs {
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                require_file(path)?;
                RunConfig::load(path)?
            }
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = self.$f { cfg.$f = v; })*};
        }
        set!(seed, divergence, mode, tau, degree, q, sigma, beta, epsilon);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn missing(message: impl Into<String>) -> Self {
        Self::new(2, message)
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(4, message)
    }
}

impl From<stochseg::Error> for CliError {
    fn from(e: stochseg::Error) -> Self {
        use stochseg::Error as E;
        let code = match &e {
            E::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 2,
            E::MissingSeeds(_) => 3,
            E::Config(_) | E::Domain(_) | E::InvalidWindow { .. } => 4,
            _ => 1,
        };
        Self::new(code, e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        stochseg::Error::from(e).into()
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::new(1, format!("csv: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::new(1, format!("json: {e}"))
    }
}

pub fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::missing(format!("no such file: {}", path.display())))
    }
}

/// CSV to `path`, or stdout when none is given.
pub fn csv_writer(path: Option<&Path>) -> Result<csv::Writer<Box<dyn std::io::Write>>, CliError> {
    let sink: Box<dyn std::io::Write> = match path {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout()),
    };
    Ok(csv::Writer::from_writer(sink))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(4)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(4);
        }
    }
    let result = match cli.command {
        Command::Segment(a) => segment::run(a),
        Command::Eval(a) => eval::run(a),
        Command::Bounds(a) => lab::bounds(a),
        Command::Sweep(a) => sweep::run(a),
        Command::GraphLab(a) => lab::graph_lab(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
