//! Seeded Monte Carlo batches. Each run owns its random streams, so results
//! do not depend on the worker count or scheduling.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::log::Verdict;
use super::run::{run_scenario_with, LogDetail};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunVerdict {
    pub seed: u64,
    pub verdict: Verdict,
    pub capture_time: Option<f64>,
    pub failure_cause: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub runs: usize,
    pub seed_base: u64,
    pub captured: usize,
    pub success_rate: f64,
    pub capture_time_mean: Option<f64>,
    pub capture_time_std: Option<f64>,
    pub failures: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub verdicts: Vec<RunVerdict>,
    pub summary: McSummary,
}

pub fn run_one(cfg: &ScenarioConfig, seed: u64) -> Result<RunVerdict> {
    let log = run_scenario_with(&cfg.clone().with_seed(seed), LogDetail::Outcome)?;
    Ok(RunVerdict {
        seed,
        verdict: log.verdict(),
        capture_time: log.capture_time(),
        failure_cause: log.failure_cause(),
    })
}

/// Runs seeds `seed_base .. seed_base + runs` on the current rayon pool.
pub fn monte_carlo(cfg: &ScenarioConfig, runs: usize, seed_base: u64) -> Result<McResult> {
    cfg.validate()?;
    let mut verdicts = (0..runs as u64)
        .into_par_iter()
        .map(|i| run_one(cfg, seed_base + i))
        .collect::<Result<Vec<_>>>()?;
    verdicts.sort_by_key(|v| v.seed);
    let summary = summarize(&verdicts, seed_base);
    Ok(McResult { verdicts, summary })
}

/// Same as [`monte_carlo`] on a dedicated pool with `threads` workers.
pub fn monte_carlo_threads(cfg: &ScenarioConfig, runs: usize, seed_base: u64, threads: usize) -> Result<McResult> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| crate::error::Error::InvalidParameter {
            field: "threads".into(),
            reason: e.to_string(),
        })?;
    pool.install(|| monte_carlo(cfg, runs, seed_base))
}

pub fn summarize(verdicts: &[RunVerdict], seed_base: u64) -> McSummary {
    let times: Vec<f64> = verdicts.iter().filter_map(|v| v.capture_time).collect();
    let captured = verdicts.iter().filter(|v| v.verdict == Verdict::Captured).count();
    let mean = (!times.is_empty()).then(|| times.iter().sum::<f64>() / times.len() as f64);
    let std = mean.map(|m| {
        let n = times.len() as f64;
        (times.iter().map(|t| (t - m).powi(2)).sum::<f64>() / n).sqrt()
    });
    let mut failures = BTreeMap::new();
    for v in verdicts {
        if let Some(c) = &v.failure_cause {
            *failures.entry(c.clone()).or_insert(0) += 1;
        }
    }
    McSummary {
        runs: verdicts.len(),
        seed_base,
        captured,
        success_rate: if verdicts.is_empty() {
            0.0
        } else {
            captured as f64 / verdicts.len() as f64
        },
        capture_time_mean: mean,
        capture_time_std: std,
        failures,
    }
}

impl McResult {
    /// One line per seed: `seed,verdict,capture_time,failure_cause`.
    pub fn verdicts_csv(&self) -> String {
        let mut out = String::from("seed,verdict,capture_time,failure_cause\n");
        for v in &self.verdicts {
            let verdict = match v.verdict {
                Verdict::Captured => "captured",
                Verdict::Timeout => "timeout",
                Verdict::Invalid => "invalid",
            };
            out.push_str(&format!(
                "{},{},{},{}\n",
                v.seed,
                verdict,
                v.capture_time.map(|t| t.to_string()).unwrap_or_default(),
                v.failure_cause.as_deref().unwrap_or("")
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_statistics() {
        let v = |seed, t: Option<f64>, cause: Option<&str>| RunVerdict {
            seed,
            verdict: if t.is_some() {
                Verdict::Captured
            } else {
                Verdict::Timeout
            },
            capture_time: t,
            failure_cause: cause.map(String::from),
        };
        let s = summarize(
            &[
                v(0, Some(10.0), None),
                v(1, Some(20.0), None),
                v(2, None, Some("not_acquired")),
                v(3, None, Some("not_acquired")),
            ],
            0,
        );
        assert_eq!(s.captured, 2);
        assert_eq!(s.success_rate, 0.5);
        assert_eq!(s.capture_time_mean, Some(15.0));
        assert_eq!(s.capture_time_std, Some(5.0));
        assert_eq!(s.failures["not_acquired"], 2);
    }

    #[test]
    fn empty_batch() {
        let s = summarize(&[], 7);
        assert_eq!(s.runs, 0);
        assert_eq!(s.success_rate, 0.0);
        assert!(s.capture_time_mean.is_none());
    }
}
