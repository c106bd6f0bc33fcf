use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};

use softbreaker::harness::{
    emit_plot_data, read_run, run_experiment, run_suite, summary_csv, ClockMode,
    ExperimentConfig, HarnessError, PlotKind, SuiteSpec, TimeseriesFilter,
};
use softbreaker::workload::{PhaseShift, WorkloadConfig};

#[derive(Parser)]
#[command(name = "softbreaker", version, about = "Cache/Estimator sidecar experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single experiment.
    Run {
        #[arg(long)]
        config_id: String,
        #[arg(long, default_value = "0")]
        phase: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 300)]
        duration_s: u64,
        /// Sinusoid period; defaults to the duration.
        #[arg(long)]
        period_s: Option<u64>,
        #[arg(long, default_value = "virtual")]
        clock: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every config × phase × seed listed in a matrix file.
    Suite {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute metrics from the logs of one run or a whole suite.
    Aggregate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Emit scatter or time-series CSV from run directories.
    PlotData {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
        /// Time series only: restrict to one config.
        #[arg(long)]
        config_id: Option<String>,
        /// Time series only: restrict to one phase shift.
        #[arg(long)]
        phase: Option<String>,
    },
}

fn bad(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::BadConfig(e.to_string())
}

fn secs(n: u64, what: &str) -> Result<Duration, HarnessError> {
    if n == 0 {
        return Err(bad(format!("{what} must be positive")));
    }
    Ok(Duration::from_secs(n))
}

fn execute(cmd: Command) -> Result<(), HarnessError> {
    match cmd {
        Command::Run {
            config_id,
            phase,
            seed,
            duration_s,
            period_s,
            clock,
            out,
        } => {
            let phase: PhaseShift = phase.parse().map_err(bad)?;
            let duration = secs(duration_s, "--duration-s")?;
            let mut workload = WorkloadConfig::standard(duration, phase, seed);
            if let Some(p) = period_s {
                workload.query.period = secs(p, "--period-s")?;
                workload.update.period = workload.query.period;
            }
            let mut cfg = ExperimentConfig::new(&config_id, workload)?.with_output_dir(&out);
            cfg.clock_mode = clock.parse::<ClockMode>()?;
            let r = run_experiment(&cfg)?;
            println!(
                "{} phase={} seed={} traffic_reduction={:.6} error_fraction={:.6} queries={} updates={}",
                r.config_id,
                r.phase_shift,
                r.seed,
                r.traffic_reduction,
                r.error_fraction,
                r.total_queries(),
                r.total_updates()
            );
            Ok(())
        }
        Command::Suite { matrix, out } => {
            let text = std::fs::read_to_string(&matrix).map_err(|e| HarnessError::io(&matrix, e))?;
            let spec = SuiteSpec::parse(&text)?;
            let outcome = run_suite(&spec, Some(&out))?;
            for row in &outcome.scatter {
                println!(
                    "{:<26} {:<4} traffic_reduction={:.6} error_fraction={:.6}",
                    row.config_id, row.phase_shift, row.traffic_reduction, row.error_fraction
                );
            }
            for (label, err) in &outcome.failures {
                eprintln!("run failed: {label}: {err}");
            }
            if outcome.all_succeeded() {
                Ok(())
            } else {
                Err(HarnessError::Startup(format!(
                    "{} of {} runs failed",
                    outcome.failures.len(),
                    outcome.failures.len() + outcome.results.len()
                )))
            }
        }
        Command::Aggregate { input, out } => {
            let results = read_run(&input)?;
            if results.is_empty() {
                return Err(HarnessError::Empty);
            }
            std::fs::write(&out, summary_csv(&results)).map_err(|e| HarnessError::io(&out, e))
        }
        Command::PlotData {
            input,
            kind,
            out,
            config_id,
            phase,
        } => {
            let kind: PlotKind = kind.parse()?;
            let filter = TimeseriesFilter {
                config_id,
                phase_shift: phase.map(|p| p.parse()).transpose().map_err(bad)?,
            };
            let results = read_run(&input)?;
            let rows = emit_plot_data(&results, kind, &filter, &out)?;
            println!("wrote {rows} rows to {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
