use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use hjlab::cli::{execute, parse_config, Command};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Sub {
    Solve,
    Ergodic,
    BochnerCheck,
    BernsteinAudit,
    Thm1Sweep,
    Thm2Sweep,
    Constants,
    Mfg,
}

impl From<Sub> for Command {
    fn from(s: Sub) -> Self {
        match s {
            Sub::Solve => Command::Solve,
            Sub::Ergodic => Command::Ergodic,
            Sub::BochnerCheck => Command::BochnerCheck,
            Sub::BernsteinAudit => Command::BernsteinAudit,
            Sub::Thm1Sweep => Command::Thm1Sweep,
            Sub::Thm2Sweep => Command::Thm2Sweep,
            Sub::Constants => Command::Constants,
            Sub::Mfg => Command::Mfg,
        }
    }
}

/// Viscous Hamilton–Jacobi / mean field game laboratory.
///
/// Writes report.json, CSV tables and SVG plots to the output directory.
/// Exit status: 0 all invariants held, 1 invariant failure or runtime
/// error, 2 usage error or rejected config.
#[derive(Debug, Parser)]
#[command(name = "hjlab", version)]
struct Args {
    #[arg(value_enum)]
    command: Sub,
    /// TOML run config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `[output] dir`; default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for randomized checks (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads. Runs are sequential, so this only bounds future use.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    threads: u32,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let text = match &args.config {
        Some(p) => match std::fs::read_to_string(p) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", p.display());
                return ExitCode::from(2);
            }
        },
        None => String::new(),
    };
    let mut cfg = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args
        .out
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    match execute(args.command.into(), &cfg, &out) {
        Ok(o) => {
            for f in &o.report.failures {
                eprintln!("FAILED: {f}");
            }
            eprintln!(
                "{}: {:?}, report at {}",
                o.report.command.name(),
                o.report.status,
                out.join("report.json").display()
            );
            ExitCode::from(o.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
