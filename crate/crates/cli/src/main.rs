//! `superadiabatic` command-line front end.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use superadiabatic::dynamics::{CorrectionMode, Method};
use superadiabatic::operator_algebra::BasisKind;

use config::{RunConfig, Scenario};
use error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "superadiabatic", version, about = "Transitionless driving for Lindblad master equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one correction mode and write trajectory, spectrum, correction and summary files.
    #[command(allow_negative_numbers = true)]
    Run(Common),
    /// Integrate several correction modes on the same grid.
    #[command(allow_negative_numbers = true)]
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated correction modes.
        #[arg(long, value_delimiter = ',', default_value = "none,general")]
        modes: Vec<String>,
    },
    /// Track the Liouvillian spectrum along the protocol.
    #[command(allow_negative_numbers = true)]
    InspectSpectrum(Common),
    /// Run the invariant suite.
    #[command(allow_negative_numbers = true)]
    Check(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long, value_enum)]
    scenario: Option<Scenario>,
    /// TOML or JSON file with the same keys as the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// none, general, unitary-frame, analytic or closed-system.
    #[arg(long)]
    correction: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fixed step; selects the rk4 integrator.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    rtol: Option<f64>,
    #[arg(long)]
    atol: Option<f64>,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long)]
    basis: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    theta0: Option<f64>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    theta_f: Option<f64>,
    #[arg(long = "T")]
    duration: Option<f64>,
    #[arg(long = "B")]
    field: Option<f64>,
}

impl Common {
    fn resolve(&self) -> CliResult<config::Resolved> {
        let file = match &self.config {
            Some(p) => RunConfig::from_file(p)?,
            None => RunConfig::default(),
        };
        let basis = self.basis.as_deref().map(str::parse::<BasisKind>).transpose()?;
        let flags = RunConfig {
            scenario: self.scenario,
            theta0: self.theta0,
            omega: self.omega,
            gamma: self.gamma,
            theta_f: self.theta_f,
            duration: self.duration,
            field: self.field,
            correction: self.correction.clone(),
            method: self.dt.map(|_| Method::Rk4Fixed),
            basis,
            dt: self.dt,
            rtol: self.rtol,
            atol: self.atol,
            t_final: self.t_final,
            grid_points: self.grid_points,
            cluster_tol: None,
            out: self.out.clone(),
            seed: self.seed,
        };
        file.overlay(&flags).resolve()
    }
}

fn execute(cli: Cli) -> CliResult<serde_json::Value> {
    match cli.command {
        Command::Run(c) => commands::run(&c.resolve()?),
        Command::Compare { common, modes } => {
            let modes = modes.iter().map(|m| m.parse::<CorrectionMode>()).collect::<Result<Vec<_>, _>>()?;
            commands::compare(&common.resolve()?, &modes)
        }
        Command::InspectSpectrum(c) => commands::inspect_spectrum(&c.resolve()?),
        Command::Check(c) => commands::check_suite(&c.resolve()?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Config(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match execute(cli) {
        Ok(summary) => {
            println!("{}", serde_json::to_string_pretty(&summary).expect("json"));
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
