//! `ma-lin`: batch front end for classification, linear solves, lifting,
//! elasticity checks and the Khabirov rewrite.
//!
//! Exit codes: 0 success, 1 usage or parse error, 2 mathematical rejection,
//! 3 non-convergence.

mod commands;
mod output;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Command, Failure, Invocation};

#[derive(Parser)]
#[command(name = "ma-lin", version, about = "Linearize, solve and verify Monge-Ampere equations")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Input JSON file.
    #[arg(long = "in", value_name = "PATH")]
    input: Option<PathBuf>,
    /// Output directory (created if absent).
    #[arg(long, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Seed for every sampled check.
    #[arg(long, default_value_t = ma_lin::DEFAULT_SEED)]
    seed: u64,
    /// Solver tolerance override.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    nx: Option<usize>,
    #[arg(long)]
    ny: Option<usize>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Classify a right-hand side F(x, y, u, p, q).
    Classify {
        #[command(flatten)]
        common: Common,
        /// Catalog id instead of an input file.
        #[arg(long)]
        id: Option<String>,
    },
    /// Solve U_XX + f U_YY = g with Dirichlet data.
    Solve {
        #[command(flatten)]
        common: Common,
    },
    /// Classify, solve, lift, resample and verify.
    Lift {
        #[command(flatten)]
        common: Common,
    },
    /// Deformation map and area-preservation report.
    Elasticity {
        #[command(flatten)]
        common: Common,
    },
    /// Rewrite x^-4 g(y/x) into the linearizable class and check it.
    Khabirov {
        #[command(flatten)]
        common: Common,
        /// g(s) instead of an input file.
        #[arg(long)]
        g: Option<String>,
        /// Number of sampled jets.
        #[arg(long)]
        jets: Option<usize>,
    },
    /// Replay a previous run from its manifest.
    Rerun {
        #[arg(long, value_name = "PATH")]
        manifest: PathBuf,
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

fn invocation(command: Command, c: &Common, id: Option<String>, g: Option<String>, jets: Option<usize>) -> Result<Invocation, Failure> {
    let input = match &c.input {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
            Some(serde_json::from_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?)
        }
        None => None,
    };
    Ok(Invocation {
        command,
        input,
        input_path: c.input.as_ref().map(|p| p.display().to_string()),
        seed: c.seed,
        tol: c.tol,
        nx: c.nx,
        ny: c.ny,
        id,
        g,
        jets,
    })
}

fn execute(cli: Cli) -> Result<u8, Failure> {
    let (inv, out, force) = match cli.command {
        Cmd::Classify { common, id } => (invocation(Command::Classify, &common, id, None, None)?, common.out, common.force),
        Cmd::Solve { common } => (invocation(Command::Solve, &common, None, None, None)?, common.out, common.force),
        Cmd::Lift { common } => (invocation(Command::Lift, &common, None, None, None)?, common.out, common.force),
        Cmd::Elasticity { common } => (invocation(Command::Elasticity, &common, None, None, None)?, common.out, common.force),
        Cmd::Khabirov { common, g, jets } => (invocation(Command::Khabirov, &common, None, g, jets)?, common.out, common.force),
        Cmd::Rerun { manifest, out, force } => (output::read_manifest(&manifest)?.invocation, out, force),
    };
    let outcome = commands::run(&inv)?;
    let manifest = output::write_run(&out, force, &inv, outcome.code, &outcome.artifacts)?;
    println!("{}", outcome.summary);
    println!("manifest: {}", manifest.display());
    Ok(outcome.code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { commands::EXIT_USAGE } else { 0 });
        }
    };
    match execute(cli) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
