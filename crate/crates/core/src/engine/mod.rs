//! Scenario configuration, the multirate run loop, logs and batches.

pub mod config;
pub mod log;
pub mod montecarlo;
pub mod run;

pub use config::{parse_config, Mode, ScenarioConfig};
pub use log::{LogRecord, RunSummary, SimEvent, SimLog, Verdict};
pub use montecarlo::{monte_carlo, monte_carlo_threads, McResult, McSummary, RunVerdict};
pub use run::{run_scenario, run_scenario_with, stream_rng, LogDetail, Simulation, Stream};
