//! Command-line surface of `mjbd`: instance generation, decomposition,
//! identifiability diagnostics, spectra and Monte-Carlo sweeps.

pub mod commands;
pub mod error;
pub mod format;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mjbd::DeltaPolicy;

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(
    name = "mjbd",
    version,
    about = "Blind joint block diagonalization of matrix sets"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a planted instance and its truth sidecars.
    Synth(SynthArgs),
    /// Block-diagonalize a matrix file and write a JSON report.
    Decompose(DecomposeArgs),
    /// Evaluate uniqueness conditions, optionally against the planted truth.
    Diagnose(DiagnoseArgs),
    /// Singular values of the stacked matrix.
    Spectrum(SpectrumArgs),
    /// Repeated synth + decompose over an SNR ladder.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Family {
    /// Mixed random blocks with additive Gaussian noise.
    Planted,
    /// Sample covariances of mixed independent source groups.
    Isa,
    /// Coupled 2+2 block pair without a unique factorization.
    CoupledPair,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Number of matrices (domains for the ISA family).
    #[arg(long, default_value_t = 10)]
    pub m: usize,
    /// Order of the observed matrices.
    #[arg(long, default_value_t = 15)]
    pub n: usize,
    /// Total block size; must equal the sum of --tau when given.
    #[arg(long)]
    pub p: Option<usize>,
    /// Comma-separated block sizes.
    #[arg(long, default_value = "2,3,3,4")]
    pub tau: String,
    /// Signal-to-noise ratio in dB; `inf` for noiseless.
    #[arg(long, default_value = "inf", value_parser = parse_snr)]
    pub snr: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Shorthand for `--family isa`.
    #[arg(long)]
    pub isa: bool,
    /// Samples per domain for the ISA family.
    #[arg(long, default_value_t = 6000)]
    pub samples: usize,
    #[arg(long, value_enum)]
    pub family: Option<Family>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    /// Singular-value ratio for rank detection.
    #[arg(long, default_value_t = 0.1)]
    pub xi: f64,
    /// Commutant threshold: `auto` or a nonnegative number.
    #[arg(long, default_value = "auto", value_parser = parse_delta)]
    pub delta: DeltaPolicy,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Congruence by the inverse square root of the mean matrix first.
    #[arg(long)]
    pub whiten: bool,
    /// Restarts of the quartic minimization.
    #[arg(long, default_value_t = 16)]
    pub restarts: usize,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Report path; standard output when omitted.
    #[arg(long)]
    pub out_report: Option<PathBuf>,
    /// Where to write the estimated diagonalizer.
    #[arg(long = "out-A")]
    pub out_a: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Truth sidecar (`<instance>.truth.json`) written by `synth`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Bound constants, e.g. `C=1,kappa=2`.
    #[arg(long)]
    pub constants: Option<String>,
    /// Largest relative block error accepted as equivalent to the truth.
    #[arg(long, default_value_t = commands::EQUIVALENCE_TOL)]
    pub tol: f64,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpectrumFormat {
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct SpectrumArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// How many of the smallest and of the largest values to list.
    #[arg(long, default_value_t = 6)]
    pub count: usize,
    #[arg(long, value_enum, default_value_t = SpectrumFormat::Csv)]
    pub format: SpectrumFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long, default_value_t = 10)]
    pub m: usize,
    #[arg(long, default_value_t = 15)]
    pub n: usize,
    #[arg(long)]
    pub p: Option<usize>,
    #[arg(long, default_value = "2,3,3,4")]
    pub tau: String,
    /// Comma-separated SNR ladder in dB.
    #[arg(long, default_value = "40,60,80,100")]
    pub snr: String,
    /// Trials per SNR; trial `i` uses seed `seed + i`.
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    #[arg(long, default_value_t = 0.1)]
    pub xi: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_snr(s: &str) -> Result<f64, String> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| format!("not a number: {s:?}"))?;
    if v.is_nan() {
        return Err("SNR must not be NaN".into());
    }
    Ok(v)
}

fn parse_delta(s: &str) -> Result<DeltaPolicy, String> {
    if s.eq_ignore_ascii_case("auto") {
        return Ok(DeltaPolicy::Auto);
    }
    match s.trim().parse::<f64>() {
        Ok(v) if v >= 0.0 && v.is_finite() => Ok(DeltaPolicy::Fixed(v)),
        _ => Err(format!(
            "expected `auto` or a nonnegative number, got {s:?}"
        )),
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let outcome = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Decompose(a) => commands::decompose(&a),
        Command::Diagnose(a) => commands::diagnose(&a),
        Command::Spectrum(a) => commands::spectrum(&a),
        Command::Experiment(a) => commands::experiment(&a),
    };
    match outcome {
        Ok(()) => error::EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
