//! `parabolic <command> [--config path] [--seed u64] [--out dir] [--alpha-digits 50,50,...] [--depth n]`
//!
//! Exit codes: 0 when every hard check passes, 1 when a check fails (named on
//! stderr), 2 for configuration errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use parabolic_cli::{run, ConfigError, Context, Overrides, RunConfig};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Command {
    Brjuno,
    Fatou,
    LiftVerify,
    Model,
    Renorm,
    Pc,
    Porosity,
    Orbits,
    VerifyAll,
}

#[derive(Debug, Parser)]
#[command(name = "parabolic", about = "Near-parabolic renormalization experiments")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON configuration file; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continued-fraction digits, repeated periodically up to `cf_depth`.
    #[arg(long, value_delimiter = ',')]
    alpha_digits: Option<Vec<u32>>,
    /// Renormalization tower depth (at most 2).
    #[arg(long)]
    depth: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let over = Overrides { seed: cli.seed, out: cli.out, alpha_digits: cli.alpha_digits, depth: cli.depth };
    let name = cli.command.to_possible_value().expect("named variant").get_name().to_string();
    let config_error = |e: &dyn std::fmt::Display| {
        eprintln!("config error: {e}");
        ExitCode::from(2)
    };
    let cfg = match RunConfig::load(cli.config.as_deref(), &over) {
        Ok(c) => c,
        Err(e) => return config_error(&e),
    };
    let out = cfg.out.clone();
    let ctx = match Context::new(cfg) {
        Ok(c) => c,
        Err(e) => return config_error(&e),
    };
    let outcome = match run(&ctx, &name) {
        Ok(o) => o,
        Err(e) if e.downcast_ref::<ConfigError>().is_some() => return config_error(&e),
        Err(e) => {
            eprintln!("check failed: {name}: {e:#}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = outcome.write(&out) {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    let report = &outcome.report;
    for c in &report.checks {
        let verdict = match (c.pass, c.hard) {
            (true, _) => "pass",
            (false, true) => "FAIL",
            (false, false) => "fail (soft)",
        };
        println!("{verdict:<11} {:<44} {:e} {} {:e}", c.name, c.achieved, c.relation.symbol(), c.target);
    }
    let failures = report.hard_failures();
    if failures.is_empty() {
        println!("{name}: all hard checks passed; report in {}", out.join("report.json").display());
        ExitCode::SUCCESS
    } else {
        for c in failures {
            eprintln!("check failed: {}", c.name);
        }
        ExitCode::from(1)
    }
}
