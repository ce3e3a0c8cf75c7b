//! `turnpoint` — staged pipeline over one run configuration:
//!
//! ```text
//! validate → roots → solve-inner → solve-outer → flatness → report
//! ```
//!
//! Every stage writes into `<out>/<hash>/<stage>/`, where `<hash>` addresses
//! the configuration (after overrides), the equation document and the code
//! version, so artifacts of different inputs never mix.  Exit codes: 0 ok,
//! 1 constraint or assertion failure, 2 input error, 3 stage run out of
//! order, 4 numerical failure.

mod pipeline;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use pipeline::{CliError, Context, Stage};

#[derive(Parser, Debug)]
#[command(name = "turnpoint", version, about = "Inner/outer Borel–Laplace solutions and their Gevrey flatness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check every exact parameter constraint (inner, outer, smallness).
    Validate(Common),
    /// Root locus of the turning-point polynomial, merging exponent, Rouché count.
    Roots(Common),
    /// Solve the Borel-plane fixed point on inner sector 0.
    SolveInner(Common),
    /// Solve the outer fixed point on outer sector 0.
    SolveOuter(Common),
    /// Cocycles over ε ladders and flatness fits.
    Flatness(Common),
    /// Gevrey-order verdict and the scaling-gap check.
    Report(Common),
    /// All stages in order.
    Pipeline(Common),
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Dot-path override into the configuration, e.g. `params.chi=5`.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Comma-separated |ε| values (solve stages: solve points; flatness: ladder).
    #[arg(long, value_delimiter = ',')]
    eps: Option<Vec<f64>>,
    /// Output root.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (common, stages): (&Common, Vec<Stage>) = match &cli.command {
        Command::Validate(c) => (c, vec![Stage::Validate]),
        Command::Roots(c) => (c, vec![Stage::Roots]),
        Command::SolveInner(c) => (c, vec![Stage::SolveInner]),
        Command::SolveOuter(c) => (c, vec![Stage::SolveOuter]),
        Command::Flatness(c) => (c, vec![Stage::Flatness]),
        Command::Report(c) => (c, vec![Stage::Report]),
        Command::Pipeline(c) => (c, Stage::ALL.to_vec()),
    };
    let ctx = Context::load(&common.config, &common.overrides, common.eps.clone(), &common.out)?;
    println!("run {} → {}", ctx.loaded.config.name, ctx.root.display());
    for stage in stages {
        ctx.run(stage)?;
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("turnpoint: {e}");
        std::process::exit(e.code());
    }
}
