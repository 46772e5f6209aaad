//! `kspic <mode> [--config FILE] [--key=value ...]`
//!
//! Exit codes: 0 success, 1 configuration error, 2 runtime error.

use kspic_core::config::{ExperimentConfig, Mode};
use kspic_core::error::KsError;
use kspic_core::experiments;
use std::path::PathBuf;
use std::process::ExitCode;

const USAGE: &str = "\
usage: kspic <mode> [--config FILE] [--key=value ...]

modes:
  hybrid               particle-grid simulation run
  nbody                direct O(N^2) interacting-particle run
  atom-ode             point-singularity ODE integration
  radial-probe         hitting statistics of the radial SDE
  radius-law           ensemble fit of the E[R^2] drift law
  critical-mass-sweep  bisect the corner aggregation threshold
  merger-compare       hybrid two-atom merger vs the point-mass ODE

options:
  --config FILE   read key=value lines (# comments) before applying flags
  --key=value     override any config key (e.g. --mass=0.35 --seed=7)
  --preset=NAME   start from a named experiment (fig1|fig4|fig5|fig6)
  --help          print this message

Flag keys match config-file keys; later settings win. Outputs are written
to the directory given by --out=DIR (resolved config, provenance hash,
CSV series, binary snapshots, summary).";

fn parse_args() -> Result<Option<ExperimentConfig>, KsError> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.is_empty() || args[0] == "--help" || args[0] == "-h" {
        println!("{USAGE}");
        return Ok(None);
    }
    let mode = Mode::parse(&args[0])?;
    let mut config_file: Option<PathBuf> = None;
    let mut overrides: Vec<(String, String)> = Vec::new();
    let mut i = 1;
    while i < args.len() {
        let arg = &args[i];
        if arg == "--help" || arg == "-h" {
            println!("{USAGE}");
            return Ok(None);
        }
        if arg == "--config" {
            i += 1;
            let Some(path) = args.get(i) else {
                return Err(KsError::Config("--config needs a file path".into()));
            };
            config_file = Some(PathBuf::from(path));
        } else if let Some(rest) = arg.strip_prefix("--config=") {
            config_file = Some(PathBuf::from(rest));
        } else if let Some(rest) = arg.strip_prefix("--") {
            let Some((k, v)) = rest.split_once('=') else {
                return Err(KsError::Config(format!("expected --key=value, got '{arg}'")));
            };
            overrides.push((k.to_string(), v.to_string()));
        } else {
            return Err(KsError::Config(format!("unexpected argument '{arg}'")));
        }
        i += 1;
    }
    overrides.push(("mode".to_string(), mode.name().to_string()));
    let cfg = ExperimentConfig::parse(config_file.as_deref(), &overrides)?;
    Ok(Some(cfg))
}

fn main() -> ExitCode {
    let cfg = match parse_args() {
        Ok(Some(cfg)) => cfg,
        Ok(None) => return ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("kspic: {e}");
            return ExitCode::from(1);
        }
    };
    match experiments::dispatch(&cfg) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            if let Some(out) = &cfg.out {
                println!("outputs written to {}", out.display());
            }
            ExitCode::SUCCESS
        }
        Err(e @ KsError::Config(_)) => {
            eprintln!("kspic: {e}");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("kspic: {e}");
            ExitCode::from(2)
        }
    }
}
