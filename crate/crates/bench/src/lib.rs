//! Fixtures shared by the benchmarks.

use uavcap_core::ScenarioConfig;

/// Nominal collaborative scenario with a short horizon.
pub fn short_scenario(duration: f64) -> ScenarioConfig {
    ScenarioConfig {
        duration,
        ..ScenarioConfig::default()
    }
}
