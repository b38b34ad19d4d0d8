//! `uavcap`: run scenarios, Monte Carlo batches, plots and config checks.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 mission not captured.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use uavcap_core::engine::log::SimLog;
use uavcap_core::engine::montecarlo::monte_carlo;
use uavcap_core::plot::{plot, PlotKind};
use uavcap_core::{parse_config, run_scenario, ScenarioConfig, Verdict};

#[derive(Parser)]
#[command(name = "uavcap", version, about = "Collaborative aerial ball-capture simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its log, summary and time series.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Run seeds `seed-base .. seed-base + runs` and summarize the verdicts.
    Mc {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
        runs: u64,
        #[arg(long, default_value_t = 0)]
        seed_base: u64,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Render a figure (SVG plus a CSV sidecar) from a run log.
    Plot {
        /// depth_profile, trajectory_3d, pixel_error or phase_timeline.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        log: PathBuf,
        /// SVG path; the CSV is written next to it with a `.csv` extension.
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a config file and print the effective tick rates.
    Check {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Errors that should exit with the usage/input code.
struct Failure(anyhow::Error);

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.into())
    }
}

fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config(&text).with_context(|| format!("invalid config {}", path.display()))
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn cmd_run(config: &Path, seed: Option<u64>, out: &Path) -> Result<ExitCode, Failure> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg = cfg.with_seed(s);
    }
    let log = run_scenario(&cfg)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join("run.ndjson"), log.to_ndjson_bytes())?;
    let summary = log.summary();
    write(
        &out.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    write(&out.join("timeseries.csv"), log.timeseries_csv())?;
    match summary.capture_time {
        Some(t) => println!("seed {}: captured at {t:.2} s", summary.seed),
        None => println!(
            "seed {}: {:?} ({})",
            summary.seed,
            summary.verdict,
            summary.failure_cause.as_deref().unwrap_or("unknown")
        ),
    }
    Ok(exit_for(summary.verdict))
}

fn exit_for(verdict: Verdict) -> ExitCode {
    match verdict {
        Verdict::Captured => ExitCode::SUCCESS,
        Verdict::Timeout | Verdict::Invalid => ExitCode::from(2),
    }
}

fn cmd_mc(config: &Path, runs: u64, seed_base: u64, out: &Path) -> Result<ExitCode, Failure> {
    let cfg = load_config(config)?;
    let result = monte_carlo(&cfg, runs as usize, seed_base)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join("verdicts.csv"), result.verdicts_csv())?;
    write(
        &out.join("mc_summary.json"),
        serde_json::to_string_pretty(&result.summary)? + "\n",
    )?;
    let s = &result.summary;
    println!("{}/{} captured ({:.1}%)", s.captured, s.runs, 100.0 * s.success_rate);
    for (cause, n) in &s.failures {
        println!("  {cause}: {n}");
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_plot(kind: &str, log_path: &Path, out: &Path) -> Result<ExitCode, Failure> {
    let kind: PlotKind = kind.parse()?;
    let file = fs::File::open(log_path).with_context(|| format!("opening {}", log_path.display()))?;
    let log = SimLog::read_ndjson(BufReader::new(file)).with_context(|| format!("reading {}", log_path.display()))?;
    let (svg, csv) = plot(&log, kind)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write(out, svg)?;
    write(&out.with_extension("csv"), csv)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(config: &Path) -> Result<ExitCode, Failure> {
    let cfg = load_config(config)?;
    let r = cfg.rates;
    println!(
        "ok: {:?} mode, seed {}, vision every {} steps ({:.2} Hz), control every {} steps ({:.2} Hz)",
        cfg.mode,
        cfg.seed,
        r.vision_every(),
        r.dynamics / r.vision_every() as f64,
        r.control_every(),
        r.dynamics / r.control_every() as f64
    );
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    // clap exits with 2 on usage errors; 2 is reserved for mission failure.
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match &cli.command {
        Command::Run { config, seed, out } => cmd_run(config, *seed, out),
        Command::Mc {
            config,
            runs,
            seed_base,
            out,
        } => cmd_mc(config, *runs, *seed_base, out),
        Command::Plot { kind, log, out } => cmd_plot(kind, log, out),
        Command::Check { config } => cmd_check(config),
    };
    match result {
        Ok(code) => code,
        Err(Failure(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
