//! Evaluation pipeline: configuration, layered run execution, and the
//! report/exit-code contract the CLI exposes.
//!
//! A run loads golden datasets, invokes the SUT through the configured
//! adapter, and works up the pyramid in layer order: structural checks
//! first, then judged dataset scores and gates, then trajectory checks,
//! then coordination suites, then goal completion and regression against
//! the baseline store. A blocking failure at layer 0 short-circuits the
//! layers above it. Reports are JSON with a fixed field order and fixed
//! decimal precision, so identical inputs produce identical bytes.

mod config;
mod runner;

pub use config::{
    load_json_array, AdapterSpec, DriftConfig, JudgeSpec, PipelineConfig, PipelineError,
    RagSampleFixture, RetentionScenario,
};
pub use runner::{
    cmd_baseline_compare, cmd_baseline_set, cmd_consistency, cmd_drift, cmd_gate, cmd_run,
    CaseConsistency, ConsistencyRunReport, DatasetReport, DriftReport, DriftRow, GateCommandReport,
    GateScoresFile, RagReport, RagSampleReport, RetentionSuiteOutcome, RunOptions, RunReport,
    SuiteReport, REPORT_VERSION,
};
