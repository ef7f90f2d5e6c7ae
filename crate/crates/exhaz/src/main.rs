//! Command-line interface for the excess-hazard modeling pipeline.

use clap::{Parser, Subcommand};
use exhaz::io::pipeline::{
    self, cmd_compare, cmd_diagnose, cmd_exceed, cmd_fit, cmd_netsurv, cmd_simulate, load_run,
    NetsurvLevel,
};
use exhaz::io::RunConfig;
use exhaz::{Error, Result};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "exhaz")]
#[command(about = "Excess-hazard survival models with spatial random effects")]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (patients.csv + truth.json).
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (defaults to paths.output).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the configured model; writes one draw CSV per chain plus
    /// diagnostics and a posterior summary table.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Net-survival curves from a fitted run.
    Netsurv {
        #[arg(long)]
        config: PathBuf,
        /// Fitted run directory (defaults to paths.output).
        #[arg(long)]
        run: Option<PathBuf>,
        /// region | marginal
        #[arg(long)]
        level: String,
        /// Comma-separated evaluation times, e.g. --t 1,3.
        #[arg(long)]
        t: Option<String>,
        /// Stratify curves by a (categorical) patient column.
        #[arg(long)]
        stratify: Option<String>,
    },
    /// Per-region exceedance probabilities P(u > threshold).
    Exceed {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        threshold: f64,
    },
    /// PSIS-LOO comparison of fitted runs.
    Compare {
        /// Fitted run directories.
        runs: Vec<PathBuf>,
        /// Report path (defaults to comparison.json in the cwd).
        #[arg(long, default_value = "comparison.json")]
        out: PathBuf,
    },
    /// Print R-hat / ESS / divergences; exits nonzero when R-hat > 1.05.
    Diagnose {
        /// Fitted run directory (or use --config to take paths.output).
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let out_dir = out.unwrap_or_else(|| cfg.paths.output.clone());
            let res = cmd_simulate(&cfg, &out_dir)?;
            println!(
                "simulated {} records ({:.1}% censored) -> {}",
                res.n,
                100.0 * res.censoring_rate,
                res.patients_path.display()
            );
        }
        Command::Fit { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let text = std::fs::read_to_string(&config)?;
            let out_dir = out.unwrap_or_else(|| cfg.paths.output.clone());
            let res = cmd_fit(&cfg, &text, &out_dir)?;
            let d = &res.diagnostics;
            println!(
                "fit complete: {} parameters, max R-hat {:.4}, divergences {:?} -> {}",
                res.names.len(),
                d.max_rhat(),
                d.divergences,
                res.run_dir.display()
            );
        }
        Command::Netsurv {
            config,
            run,
            level,
            t,
            stratify,
        } => {
            let cfg = RunConfig::load(&config)?;
            let run_dir = run.unwrap_or_else(|| cfg.paths.output.clone());
            let loaded = pipeline::load_run_with_config(&run_dir, cfg)?;
            let level = match level.as_str() {
                "region" => NetsurvLevel::Region,
                "marginal" => NetsurvLevel::Marginal,
                other => {
                    return Err(Error::Config(format!(
                        "--level must be 'region' or 'marginal', got '{other}'"
                    )))
                }
            };
            let t_points = match t {
                Some(spec) => Some(
                    spec.split(',')
                        .map(|s| {
                            s.trim().parse::<f64>().map_err(|_| {
                                Error::Config(format!("bad time point '{s}' in --t"))
                            })
                        })
                        .collect::<Result<Vec<f64>>>()?,
                ),
                None => None,
            };
            let path = cmd_netsurv(&loaded, &level, t_points, stratify.as_deref(), &run_dir)?;
            println!("net-survival curves -> {}", path.display());
        }
        Command::Exceed {
            config,
            run,
            threshold,
        } => {
            let cfg = RunConfig::load(&config)?;
            let run_dir = run.unwrap_or_else(|| cfg.paths.output.clone());
            let loaded = pipeline::load_run_with_config(&run_dir, cfg)?;
            let path = cmd_exceed(&loaded, threshold, &run_dir)?;
            println!("exceedance probabilities -> {}", path.display());
        }
        Command::Compare { runs, out } => {
            let report = cmd_compare(&runs, &out)?;
            println!("{:<40} {:>12} {:>8} {:>12} {:>8}", "model", "elpd", "se", "elpd_diff", "diff_se");
            for e in &report.entries {
                println!(
                    "{:<40} {:>12.1} {:>8.1} {:>12.1} {:>8.1}",
                    e.name, e.elpd, e.se, e.elpd_diff, e.diff_se
                );
            }
            println!("report -> {}", out.display());
        }
        Command::Diagnose { run, config } => {
            let run_dir = match (run, config) {
                (Some(r), _) => r,
                (None, Some(c)) => RunConfig::load(&c)?.paths.output,
                (None, None) => {
                    return Err(Error::Config(
                        "diagnose needs --run or --config".into(),
                    ))
                }
            };
            let res = cmd_diagnose(&run_dir, 1.05)?;
            let meta = &res.meta;
            println!(
                "{} chains x {} iterations ({} warmup), seed {}",
                meta.chains, meta.iterations, meta.warmup, meta.seed
            );
            println!("{:<20} {:>10} {:>12}", "parameter", "rhat", "ess");
            for (i, name) in meta.diagnostics.names.iter().enumerate() {
                println!(
                    "{:<20} {:>10.4} {:>12.1}",
                    name, meta.diagnostics.rhat[i], meta.diagnostics.ess[i]
                );
            }
            println!(
                "divergences per chain: {:?}; acceptance: {:?}",
                meta.diagnostics.divergences,
                meta.diagnostics
                    .accept_rates
                    .iter()
                    .map(|a| (a * 100.0).round() / 100.0)
                    .collect::<Vec<_>>()
            );
            if !res.ok {
                return Err(Error::Convergence(format!(
                    "max R-hat {:.4} exceeds 1.05",
                    meta.diagnostics.max_rhat()
                )));
            }
            // silence unused warning for load_run re-export
            let _ = load_run;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
