use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use irs_cache::cache::{backhaul_cost, solve_content_placement, zipf_popularity};
use irs_cache::config::load_experiment_config;
use irs_cache::harness::{emit_results, read_results, run_experiment, verify_results, ExperimentConfig, Format};

#[derive(Parser)]
#[command(name = "irs-cache", version, about = "Robust cache placement and IRS beamforming experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a sweep and write one record per (scheme, rate, CSI level, seed).
    Run {
        /// Experiment file; defaults are used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "csv")]
        format: Format,
        /// Worker threads; all cores when omitted.
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Re-solve and re-certify the records of a results file.
    Verify {
        #[arg(long)]
        config: Option<PathBuf>,
        /// CSV or JSON file written by `run`.
        #[arg(long)]
        results: PathBuf,
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Optimal content placement for a Zipf library.
    Placement {
        #[arg(long)]
        files: usize,
        #[arg(long)]
        storage: f64,
        #[arg(long, default_value_t = 1.0)]
        zipf: f64,
    },
}

fn load(config: Option<&PathBuf>) -> Result<ExperimentConfig, String> {
    match config {
        Some(p) => load_experiment_config(p).map_err(|e| e.to_string()),
        None => Ok(ExperimentConfig::default()),
    }
}

fn threads(n: Option<usize>) -> Result<(), String> {
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool, String> {
    match cli.command {
        Command::Run {
            config,
            out,
            format,
            parallel,
        } => {
            threads(parallel)?;
            let cfg = load(config.as_ref())?;
            let results = run_experiment(&cfg).map_err(|e| e.to_string())?;
            emit_results(&results, format, &out).map_err(|e| e.to_string())?;
            let failed = results.iter().filter(|r| !r.feasible).count();
            eprintln!("{} records written to {}, {failed} failed", results.len(), out.display());
            Ok(failed == 0)
        }
        Command::Verify {
            config,
            results,
            parallel,
        } => {
            threads(parallel)?;
            let cfg = load(config.as_ref())?;
            let stored = read_results(&results).map_err(|e| e.to_string())?;
            let checks = verify_results(&cfg, &stored).map_err(|e| e.to_string())?;
            let mut ok = true;
            for v in &checks {
                let r = &v.stored;
                let status = if !v.matches() {
                    "MISMATCH"
                } else if v.violations > 0 {
                    "VIOLATED"
                } else {
                    "ok"
                };
                ok &= status == "ok" && r.feasible;
                println!(
                    "{status:8} {} gamma={} delta_g={} seed={} min_rate={:.6} violations={}/{}",
                    r.scheme, r.gamma_bps_hz, r.delta_g, r.seed, v.recomputed.min_rate_certified, v.violations, v.samples
                );
            }
            Ok(ok)
        }
        Command::Placement { files, storage, zipf } => {
            let popularity = zipf_popularity(files, zipf).map_err(|e| e.to_string())?;
            let placement = solve_content_placement(&popularity, storage).map_err(|e| e.to_string())?;
            println!("file,popularity,placement");
            for (f, (b, c)) in popularity.iter().zip(&placement).enumerate() {
                println!("{},{b},{c}", f + 1);
            }
            let miss = backhaul_cost(&placement, &popularity, &[1.0]).map_err(|e| e.to_string())?;
            eprintln!("miss probability {miss}");
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
