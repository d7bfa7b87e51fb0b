use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use qmag::reproduce::{self, Case, Options};
use qmag::run::{execute, Mode, Preset, RunConfig, BUILD};
use qmag::{Error, Result};

/// Trapped-ion dressed-state magnetometry: simulation, Bayesian inference
/// and baseline estimators.
#[derive(Debug, Parser)]
#[command(name = "qmag", version = BUILD)]
struct Cli {
    /// What to run. Overrides the mode in the config.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
    /// JSON config. Keys override the preset; unknown keys are errors.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Starting point for the config.
    #[arg(long, value_enum, default_value = "case-i")]
    preset: Preset,
    #[arg(long)]
    seed: Option<u64>,
    /// Dataset JSON for inference and baseline modes.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Reproduction target; all of them when omitted.
    #[arg(long = "case", value_enum)]
    cases: Vec<Case>,
    /// Full-length chains for reproduce (slow).
    #[arg(long)]
    full: bool,
    /// Print the effective config with every default filled in, then exit.
    #[arg(long)]
    print_config: bool,
}

fn config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_json_over(cli.preset, &std::fs::read_to_string(path)?)?,
        None => RunConfig::preset(cli.preset),
    };
    if let Some(m) = cli.mode {
        cfg.mode = m;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.data {
        cfg.data = Some(d.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<bool> {
    let cfg = config(cli)?;
    if cli.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(true);
    }
    if cfg.mode != Mode::Reproduce {
        let summary = execute(&cfg, &cli.out)?;
        println!("{}", serde_json::to_string_pretty(&summary)?);
        return Ok(true);
    }
    let cases = if cli.cases.is_empty() { Case::ALL.to_vec() } else { cli.cases.clone() };
    let options = Options {
        full: cli.full,
        seed: cfg.seed,
    };
    let mut ok = true;
    for case in cases {
        let report = reproduce::run(case, options, Some(&cli.out))?;
        print!("{report}");
        ok &= report.passed();
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Json(_) = e {
                eprintln!("check the config keys and value types");
            }
            ExitCode::FAILURE
        }
    }
}
