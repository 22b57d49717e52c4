//! `sns`: simulations, verification suites and large-deviation probes for
//! stochastic 2D Navier-Stokes on the torus, driven by JSON run configs.

mod commands;
mod config;
mod error;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::VerifyTarget;
use config::RunConfig;
use error::CliError;
use run::RunDir;

#[derive(Parser)]
#[command(name = "sns", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Parent directory for run directories (overrides `output_dir`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Run seed (overrides `seed` and the optimizer seed).
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, value_name = "N", default_value_t = 0)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one trajectory and write its diagnostics.
    Simulate,
    /// Heat-kernel exponent fits and Biot-Savart identities.
    Verify {
        #[arg(value_enum, default_value_t = VerifyTarget::All)]
        target: VerifyTarget,
    },
    /// Estimate the rate function at a target.
    Rate,
    /// Monte Carlo estimate of small-noise event probabilities.
    Mc,
    /// Local Lipschitz quotients of the additive split.
    ProbeLipschitz,
    /// Uniform convergence of the controlled equation as epsilon -> 0.
    ProbeUniform,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Verify { .. } => "verify",
            Command::Rate => "rate",
            Command::Mc => "mc",
            Command::ProbeLipschitz => "probe-lipschitz",
            Command::ProbeUniform => "probe-uniform",
        }
    }
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let mut rc = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        rc.seed = seed;
        if let Some(rate) = rc.rate.as_mut() {
            rate.options.seed = seed;
        }
    }
    if let Some(out) = &cli.out {
        rc.output_dir = out.clone();
    }
    if let Command::Simulate = cli.command {
        commands::resolve_simulate(&mut rc)?;
    }
    Ok(rc)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let rc = load(cli)?;
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let mut run = RunDir::create(&rc.output_dir, cli.command.name(), &rc.to_json())?;
    let result = match &cli.command {
        Command::Simulate => commands::simulate(&rc, &mut run),
        Command::Verify { target } => commands::verify(&rc, &mut run, *target),
        Command::Rate => commands::rate(&rc, &mut run),
        Command::Mc => commands::mc(&rc, &mut run),
        Command::ProbeLipschitz => commands::probe_lipschitz(&rc, &mut run),
        Command::ProbeUniform => commands::probe_uniform(&rc, &mut run),
    };
    let status = match &result {
        Ok(_) => "ok",
        Err(CliError::Invariant(_)) => "invariant_failure",
        Err(_) => "error",
    };
    let dir = run.finish(status)?;
    let summary = result.inspect_err(|_| eprintln!("run directory: {}", dir.display()))?;
    for line in summary {
        println!("{line}");
    }
    println!("{}", dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sns: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
