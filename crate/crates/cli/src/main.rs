//! `dualadam run <subcommand>` writes one run directory per invocation.
//!
//! Exit codes: 0 on success, 1 on any error, 2 when every artifact was written but
//! some run diverged without `allow_divergence`.

use anyhow::{Context, Result};
use clap::{Parser, Subcommand as ClapSubcommand};
use dualadam::config::parse_seed_range;
use dualadam::runner::{self, RunOptions, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dualadam", version, about = "InvAdam/DualAdam experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(ClapSubcommand)]
enum Command {
    /// Run one experiment.
    Run {
        /// trajectory, train, hessian, escape or sweep.
        #[arg(value_parser = parse_subcommand)]
        subcommand: Subcommand,
        /// TOML config; omitted keys take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Inclusive seed range `a..b` or a single seed; replaces the config's seeds.
        #[arg(long, value_parser = parse_seeds)]
        seeds: Option<Seeds>,
        /// Output root. Defaults to $DUALADAM_OUT, then `runs`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads.
        #[arg(long, value_parser = clap::value_parser!(usize))]
        jobs: Option<usize>,
        /// Validate the run directory after writing it.
        #[arg(long)]
        check: bool,
    },
    /// Validate an existing run directory.
    Check { run_dir: PathBuf },
    /// Print the default config of a subcommand as TOML.
    Defaults {
        #[arg(value_parser = parse_subcommand)]
        subcommand: Subcommand,
    },
}

fn parse_subcommand(s: &str) -> Result<Subcommand, String> {
    s.parse()
}

#[derive(Clone)]
struct Seeds(Vec<u64>);

fn parse_seeds(s: &str) -> Result<Seeds, String> {
    parse_seed_range(s).map(Seeds).map_err(|e| e.to_string())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            subcommand,
            config,
            seeds,
            out,
            jobs,
            check,
        } => {
            if jobs == Some(0) {
                anyhow::bail!("--jobs must be at least 1");
            }
            let opts = RunOptions {
                config,
                seeds: seeds.map(|s| s.0),
                out_root: out,
                jobs,
            };
            let (dir, manifest) =
                runner::execute(subcommand, &opts).with_context(|| format!("{subcommand} run failed"))?;
            for w in &manifest.warnings {
                eprintln!("warning: {w}");
            }
            if check {
                runner::check_run_dir(&dir)?;
            }
            println!("{}", dir.display());
            if manifest.unexpected_divergence {
                eprintln!("error: diverged: {}", manifest.diverged.join("; "));
                return Ok(ExitCode::from(2));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Check { run_dir } => {
            let m = runner::check_run_dir(&run_dir)?;
            println!("{}: {} files ok", run_dir.display(), m.files.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::Defaults { subcommand } => {
            print!("{}", runner::Spec::parse(subcommand, "")?.to_toml());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
