//! `precode`: linear precoder design for vector Gaussian channels.

mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{Format, Overrides};
use precoding::verify::{Budget, Mutation};

const EXIT_CONFIG: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 2;
const EXIT_CAP: u8 = 3;

#[derive(Parser)]
#[command(name = "precode", version, about = "Mutual-information precoding for vector Gaussian channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (stdout when absent).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Monte Carlo samples; switches integration to Monte Carlo.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// Gauss–Hermite nodes per dimension; switches integration to quadrature.
    #[arg(long, global = true, conflicts_with = "samples")]
    quadrature: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize the precoder at one power and write U, σ, V, MI and the KKT report.
    Optimize,
    /// Compare four strategies over an SNR grid.
    Sweep,
    /// Solve MaxMinDist or MinPower.
    Mindist,
    /// Run a reduction next to its direct oracle.
    Reduce,
    /// Run the invariant suite.
    Verify {
        /// Full budgets instead of the reduced defaults.
        #[arg(long)]
        full: bool,
        #[arg(long, hide = true, value_enum)]
        mutate: Option<Mutant>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mutant {
    JacobianSign,
    CouplingSign,
}

fn write_out(path: Option<&PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            Ok(out.flush()?)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    let c = cli.common;
    let ov = Overrides {
        seed: c.seed,
        out: c.out.clone(),
        format: c.format,
        samples: c.samples,
        quadrature: c.quadrature,
    };
    let (outcome, out) = match cli.command {
        Command::Verify { full, mutate } => {
            let budget = if full { Budget::Full } else { Budget::Reduced };
            let mutation = match mutate {
                None => Mutation::None,
                Some(Mutant::JacobianSign) => Mutation::JacobianSign,
                Some(Mutant::CouplingSign) => Mutation::CouplingSign,
            };
            let o = commands::verify(budget, mutation, c.format)?;
            write_out(c.out.as_ref(), &o.text)?;
            return Ok(if o.converged { 0 } else { 1 });
        }
        Command::Optimize => {
            let r = config::load(c.config.as_deref(), "optimize", &ov)?;
            (commands::optimize(&r)?, r.output)
        }
        Command::Sweep => {
            let r = config::load(c.config.as_deref(), "sweep", &ov)?;
            (commands::sweep(&r)?, r.output)
        }
        Command::Mindist => {
            let r = config::load(c.config.as_deref(), "mindist", &ov)?;
            (commands::mindist(&r)?, r.output)
        }
        Command::Reduce => {
            let r = config::load(c.config.as_deref(), "reduce", &ov)?;
            (commands::reduce(&r)?, r.output)
        }
    };
    write_out(out.as_ref(), &outcome.text)?;
    if outcome.converged {
        Ok(0)
    } else {
        eprintln!("warning: a solver did not converge; results were written");
        Ok(EXIT_NOT_CONVERGED)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            let cap = e
                .chain()
                .any(|c| matches!(c.downcast_ref::<precoding::error::Error>(), Some(precoding::error::Error::DimensionCap(_))));
            ExitCode::from(if cap { EXIT_CAP } else { EXIT_CONFIG })
        }
    }
}
