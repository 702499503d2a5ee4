use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use evodpo::cli::{execute, report};
use evodpo::config::{parse_config, parse_seeds, Mode, RunConfig};
use evodpo::{Error, Result};

/// Evolving-reference preference optimization on drifting preference bandits.
#[derive(Parser)]
#[command(name = "evodpo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured mode (one seed with --seed, else the config seeds).
    Run(RunArgs),
    /// Run the lemma checks and write their reports.
    Verify(RunArgs),
    /// Run the configured mode over a seed range.
    Sweep(RunArgs),
    /// Aggregate run summaries into one comparison table.
    Report(ReportArgs),
}

#[derive(Args)]
struct RunArgs {
    /// key = value config file; omitted keys take the defaults.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "N", conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Seed range `N..M` (half-open), `N..=M`, or a comma list.
    #[arg(long, value_name = "N..M", value_parser = |s: &str| parse_seeds(s).map(SeedSet))]
    seeds: Option<SeedSet>,
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// evodpo, fixed-ref, atlas, reward-bandit or verify.
    #[arg(long, value_name = "NAME")]
    mode: Option<Mode>,
}

#[derive(Clone)]
struct SeedSet(Vec<u64>);

#[derive(Args)]
struct ReportArgs {
    /// summary.json files written by run, verify or sweep.
    #[arg(required = true, value_name = "SUMMARY")]
    summaries: Vec<PathBuf>,
    /// Also write report.csv into this directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn load(args: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => parse_config(&fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?)?,
        None => RunConfig::default(),
    };
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(s) = args.seed {
        cfg.seeds = vec![s];
    }
    if let Some(s) = &args.seeds {
        cfg.seeds = s.0.clone();
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.command {
        Command::Run(a) | Command::Sweep(a) => load(a)?,
        Command::Verify(a) => {
            if a.mode.is_some_and(|m| m != Mode::Verify) {
                return Err(Error::InvalidArgument("verify only runs --mode verify".into()));
            }
            RunConfig {
                mode: Mode::Verify,
                ..load(a)?
            }
        }
        Command::Report(a) => {
            let table = report(&a.summaries)?;
            if let Some(dir) = &a.out {
                fs::create_dir_all(dir).map_err(|e| Error::Io {
                    path: dir.clone(),
                    source: e,
                })?;
                let path = dir.join("report.csv");
                fs::write(&path, &table).map_err(|e| Error::Io { path, source: e })?;
            }
            print!("{table}");
            return Ok(());
        }
    };
    let summary = execute(&cfg)?;
    println!(
        "{}: {} seed(s), mean {} (sem {}) -> {}",
        summary.mode,
        summary.seeds.len(),
        summary.mean,
        summary.sem,
        cfg.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
