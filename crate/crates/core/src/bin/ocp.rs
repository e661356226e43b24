use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::PossibleValuesParser;
use clap::Parser;
use oriented_cp::runner::{exit_code, run_subcommand, Config, SUBCOMMANDS};
use oriented_cp::{Error, Result};

/// Output directory when neither --out nor this variable is given.
const OUT_VAR: &str = "OCP_OUT";

#[derive(Parser, Debug)]
#[command(name = "ocp", version, about = "Contact processes in random environments on oriented lattices")]
struct Cli {
    #[arg(value_parser = PossibleValuesParser::new(SUBCOMMANDS))]
    subcommand: String,
    /// key = value config file; a previous run's manifest.cfg works as well
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. --set lambda=0.5 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: $OCP_OUT, else ./out]
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses every core
    #[arg(long)]
    jobs: Option<usize>,
}

fn run(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => Config::parse(
            &fs::read_to_string(p).map_err(|e| Error::Invalid(format!("cannot read {}: {e}", p.display())))?,
        )?,
        None => Config::default(),
    };
    for s in &cli.sets {
        cfg.set_pair(s)?;
    }
    if let Some(seed) = cli.seed {
        cfg.set("seed", seed);
    }
    if let Some(jobs) = cli.jobs {
        cfg.set("jobs", jobs);
    }
    let out = cli
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_VAR).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let outcome = run_subcommand(&cli.subcommand, &cfg, &out)?;
    for f in &outcome.files {
        println!("{}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ocp {}: {e}", cli.subcommand);
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
