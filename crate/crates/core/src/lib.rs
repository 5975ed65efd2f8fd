//! Evaluation engine for prompt and agent pipelines.
//!
//! The engine organizes checks into five layers, cheapest first:
//!
//! - layer 0: deterministic structure checks (prompt templates, output schemas)
//! - layer 1: golden-dataset evaluation with weighted scores and mandatory gates
//! - layer 2: single-agent trajectory and tool-call scoring
//! - layer 3: multi-agent handoff, state retention, and failure recovery
//! - layer 4: end-to-end goal completion and regression against baselines
//!
//! [`model`] holds the shared data model (datasets, scores, run records).
//! [`sut`] talks to the system under test through pluggable adapters,
//! [`judge`] scores responses against binary rubrics, and the remaining
//! modules implement the per-layer evaluation logic. [`pipeline`] wires
//! everything into the reportable runs exposed by the CLI.

pub mod agent;
pub mod gates;
pub mod judge;
pub mod layer0;
pub mod model;
pub mod pipeline;
pub mod rag;
pub mod regression;
pub mod sut;

/// Rounds to six decimal places, the precision used in serialized reports.
pub fn round6(value: f64) -> f64 {
    (value * 1_000_000.0).round() / 1_000_000.0
}

#[cfg(test)]
mod tests {
    use super::round6;

    #[test]
    fn round6_truncates_noise() {
        assert_eq!(round6(0.123_456_789), 0.123_457);
        assert_eq!(round6(1.0), 1.0);
        assert_eq!(round6(0.7), 0.7);
    }
}
