//! `fadestab` — stability analysis of Hamiltonian systems under fading
//! stochastic perturbations.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 every verdict inconclusive.

mod commands;
mod config;
mod figures;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "fadestab", version, about = "Stability of Hamiltonian systems under fading stochastic perturbations")]
pub struct Cli {
    /// JSON run configuration; command-line flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed of the Monte Carlo streams.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print the resolved pipeline as JSON and stop.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Periodic orbits and the frequency curve of the limiting system.
    Orbit(OrbitArgs),
    /// Averaged drift coefficients and their small-energy exponents.
    Average(AverageArgs),
    /// Stability verdicts from the averaged drift.
    Classify(ClassifyArgs),
    /// Ensemble of sample paths with quantile summaries.
    Simulate(SimulateArgs),
    /// Probability that the weighted amplitude leaves the epsilon-ball.
    ExitProb(ExitProbArgs),
    /// Regenerates the sample-path data of a figure.
    ReproduceFigure(FigureArgs),
}

#[derive(Debug, Args)]
pub struct OrbitArgs {
    /// `builtin:NAME?k=v&...` or a JSON system definition file.
    #[arg(long)]
    pub system: Option<String>,
    #[arg(long)]
    pub emin: Option<f64>,
    #[arg(long)]
    pub emax: Option<f64>,
    #[arg(long)]
    pub n_energies: Option<usize>,
    #[arg(long)]
    pub n_phi: Option<usize>,
    /// Also write `orbit_<i>.csv` for every energy.
    #[arg(long)]
    pub dump_orbits: bool,
}

#[derive(Debug, Args)]
pub struct AverageArgs {
    #[arg(long)]
    pub system: Option<String>,
    /// Averaging order N (default: the series truncation).
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long)]
    pub n_phi: Option<usize>,
    /// Fit window as `lo,hi` in energy.
    #[arg(long, value_parser = config::parse_z0)]
    pub window: Option<[f64; 2]>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[command(flatten)]
    pub average: AverageArgs,
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Initial radius for the practical-stability horizon.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub t0: Option<f64>,
}

#[derive(Debug, Args, Clone)]
pub struct SimArgs {
    #[arg(long)]
    pub system: Option<String>,
    #[arg(long)]
    pub t0: Option<f64>,
    #[arg(long)]
    pub t1: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub n_paths: Option<usize>,
    /// Initial point `x,y`.
    #[arg(long, value_parser = config::parse_z0, allow_hyphen_values = true)]
    pub z0: Option<[f64; 2]>,
    /// `rk4-em` (default) or `em`.
    #[arg(long)]
    pub scheme: Option<String>,
    /// Number of log-spaced sample times.
    #[arg(long)]
    pub n_times: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    /// Also report the level of `E·t^theta`.
    #[arg(long)]
    pub theta: Option<f64>,
    /// Window `lo,hi` for the decay and scaling fits (default: last two
    /// decades of the horizon).
    #[arg(long, value_parser = config::parse_z0)]
    pub window: Option<[f64; 2]>,
    /// Write full trajectories of the first K paths.
    #[arg(long)]
    pub save_paths: Option<usize>,
    #[arg(long)]
    pub record_stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExitProbArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// `unit` or `n,q,prefactor[,extra]`.
    #[arg(long)]
    pub weight: Option<String>,
}

#[derive(Debug, Args)]
pub struct FigureArgs {
    #[arg(long)]
    pub index: u32,
    #[arg(long)]
    pub panel: Option<String>,
    /// Override the manifest's paths per curve.
    #[arg(long)]
    pub n_paths: Option<usize>,
    /// Upper bound on every curve's horizon.
    #[arg(long)]
    pub t1: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let fadestab::Error::FitAmbiguous { slope, .. } = &e {
                eprintln!("raw slope: {slope:.16e}");
            }
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
