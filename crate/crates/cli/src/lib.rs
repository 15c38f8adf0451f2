//! Command-line front end: mesh generation, offline precompute, batch
//! solves, the many-query benchmark and the distribution probe.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use sketchfem::sketch::DistributionMode;

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use commands::{bench, generate, precompute, probe, solve};
use config::{Bc, DataChoice, MeshSource, Problem, Sampler};
use error::{CliError, CliResult, EXIT_OK, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "sketchfem", version, about = "Sketched Galerkin solves for many-query elliptic problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a structured unit square or cube mesh
    Generate(GenerateArgs),
    /// Build the parameter-independent artifact
    Precompute(PrecomputeArgs),
    /// Solve a batch of parameter vectors from a CSV file
    Solve(SolveArgs),
    /// Many-query benchmark with random parameters
    Bench(BenchArgs),
    /// Sweep sampling-distribution distances over the basis size
    Probe(ProbeArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// subdivisions per axis
    #[arg(long)]
    pub m: usize,
    #[arg(long, value_enum, default_value_t = Bc::Dirichlet)]
    pub bc: Bc,
    /// output prefix
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MeshArgs {
    /// prefix of existing .node/.ele/.face files
    #[arg(long, conflicts_with_all = ["m"])]
    pub mesh: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// subdivisions per axis of a generated mesh
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, value_enum, default_value_t = Bc::Dirichlet)]
    pub bc: Bc,
    /// defaults to dirichlet when the mesh has Dirichlet facets
    #[arg(long, value_enum)]
    pub problem: Option<Problem>,
}

impl MeshArgs {
    fn source(&self) -> CliResult<MeshSource> {
        match (&self.mesh, self.m) {
            (Some(prefix), _) => Ok(MeshSource::File { prefix: prefix.clone() }),
            (None, Some(m)) => MeshSource::structured(self.dim, m, self.bc),
            (None, None) => Err(CliError::Usage("give either --mesh PREFIX or --m N".into())),
        }
    }
}

#[derive(Debug, Args)]
pub struct PrecomputeArgs {
    #[command(flatten)]
    pub mesh: MeshArgs,
    /// desk-dirichlet, desk-neumann, sphere-dirichlet or a JSON file
    #[arg(long)]
    pub data: Option<DataChoice>,
    #[arg(long)]
    pub rho: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long)]
    pub artifact: PathBuf,
    /// CSV with one parameter vector per row
    #[arg(long)]
    pub queries: PathBuf,
    /// sample count; defaults to the budget for --epsilon and --delta
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0.2)]
    pub delta: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DistributionMode::Prop33)]
    pub dist_mode: DistributionMode,
    /// compare against the exact sparse solve
    #[arg(long)]
    pub exact: bool,
    /// solve with the exact Gram matrix instead of a sketch
    #[arg(long)]
    pub exact_gram: bool,
    /// output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub artifact: PathBuf,
    #[arg(long, default_value = "bench")]
    pub label: String,
    /// comma-separated basis sizes (default: the artifact's)
    #[arg(long, value_delimiter = ',')]
    pub rho: Vec<usize>,
    /// comma-separated sample counts
    #[arg(long, value_delimiter = ',', required = true)]
    pub samples: Vec<usize>,
    /// number of random parameter vectors
    #[arg(long, default_value_t = 100)]
    pub queries: usize,
    /// uniform:a:b or exp:a:b
    #[arg(long, default_value = "uniform:0.1:100")]
    pub sampler: Sampler,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DistributionMode::Prop33)]
    pub dist_mode: DistributionMode,
    #[arg(long, default_value_t = 0.5)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0.2)]
    pub delta: f64,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    /// output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub mesh: MeshArgs,
    /// comma-separated basis sizes (default 1, 5, 10, ...)
    #[arg(long, value_delimiter = ',')]
    pub rho: Vec<usize>,
    #[arg(long, default_value = "uniform:0.01:1")]
    pub sampler: Sampler,
    /// parameter draws averaged per row
    #[arg(long, default_value_t = 5)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// output CSV file
    #[arg(long)]
    pub out: PathBuf,
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Generate(a) => {
            generate::run(&generate::GenerateConfig::new(a.dim, a.m, a.bc, a.out)?)?;
        }
        Command::Precompute(a) => {
            let cfg = precompute::PrecomputeConfig {
                mesh: a.mesh.source()?,
                problem: a.mesh.problem,
                data: a.data,
                rho: a.rho,
                out: a.out,
            };
            precompute::run(&cfg)?;
        }
        Command::Solve(a) => {
            let cfg = solve::SolveConfig {
                artifact: a.artifact,
                queries: a.queries,
                samples: a.samples,
                epsilon: a.epsilon,
                delta: a.delta,
                seed: a.seed,
                dist_mode: a.dist_mode,
                exact: a.exact,
                exact_gram: a.exact_gram,
                out: a.out,
            };
            if !(cfg.epsilon > 0.0 && cfg.epsilon.is_finite()) || !(cfg.delta > 0.0 && cfg.delta < 1.0) {
                return Err(CliError::Usage("--epsilon must be positive and --delta in (0, 1)".into()));
            }
            solve::run(&cfg)?;
        }
        Command::Bench(a) => {
            let cfg = bench::BenchConfig {
                artifact: a.artifact,
                label: a.label,
                rho: a.rho,
                samples: a.samples,
                queries: a.queries,
                sampler: a.sampler,
                seed: a.seed,
                dist_mode: a.dist_mode,
                epsilon: a.epsilon,
                delta: a.delta,
                bins: a.bins,
                out: a.out,
            };
            bench::run(&cfg)?;
        }
        Command::Probe(a) => {
            let cfg = probe::ProbeConfig {
                mesh: a.mesh.source()?,
                problem: a.mesh.problem,
                rho: a.rho,
                sampler: a.sampler,
                draws: a.draws,
                seed: a.seed,
                out: a.out,
            };
            probe::run(&cfg)?;
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            log::error!("{e}");
            e.exit_code()
        }
    }
}
