//! Pipeline configuration file: adapter/judge wiring, gate policies, layer
//! selection, and fixture paths. Paths are resolved relative to the config
//! file; referenced files must exist at load time.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{GoalTask, HandoffScenario, InjectionScenario, RetentionCheck};
use crate::gates::GatePolicy;
use crate::judge::{Judge, RemoteJudge, ScriptedJudge};
use crate::rag::{RagGates, RagSample};
use crate::regression::{DriftMode, PromptGraph, DRIFT_THRESHOLD, DRIFT_WINDOW_DAYS, REGRESSION_MARGIN};
use crate::sut::{
    CommandAdapter, HttpAdapter, ScriptedAdapter, SutAdapter, Turn, DEFAULT_CALL_TIMEOUT,
};

/// Pipeline failures that map onto the CLI exit-code contract: configuration
/// problems exit 2, SUT/judge infrastructure problems exit 3.
#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Infra(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> u8 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::Infra(_) => 3,
        }
    }
}

/// How the SUT is reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdapterSpec {
    /// Deterministic fixture adapter driven by a behaviour table.
    Scripted { path: PathBuf },
    /// Subprocess speaking JSON lines on stdin/stdout.
    Command {
        argv: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_ms: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        retries: Option<u32>,
    },
    /// HTTP endpoint accepting the request as JSON.
    Http {
        url: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_ms: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        retries: Option<u32>,
    },
}

impl AdapterSpec {
    pub fn build(&self, seed: Option<u64>) -> Result<Box<dyn SutAdapter>, PipelineError> {
        match self {
            AdapterSpec::Scripted { path } => {
                let adapter = ScriptedAdapter::from_file(path, seed)
                    .map_err(|e| PipelineError::Config(e.to_string()))?;
                Ok(Box::new(adapter))
            }
            AdapterSpec::Command {
                argv,
                timeout_ms,
                retries,
            } => {
                let adapter = CommandAdapter::new(
                    argv.clone(),
                    timeout_ms.map_or(DEFAULT_CALL_TIMEOUT, Duration::from_millis),
                    retries.unwrap_or(0),
                )
                .map_err(|e| PipelineError::Config(e.to_string()))?;
                Ok(Box::new(adapter))
            }
            AdapterSpec::Http {
                url,
                timeout_ms,
                retries,
            } => Ok(Box::new(HttpAdapter::new(
                url.clone(),
                timeout_ms.map_or(DEFAULT_CALL_TIMEOUT, Duration::from_millis),
                retries.unwrap_or(0),
            ))),
        }
    }
}

/// How responses are judged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JudgeSpec {
    /// Lookup-table judge driven by a fixture file.
    Scripted { path: PathBuf },
    /// HTTP judge endpoint.
    Remote {
        url: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_ms: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        max_in_flight: Option<usize>,
    },
}

impl JudgeSpec {
    pub fn build(&self) -> Result<Box<dyn Judge>, PipelineError> {
        match self {
            JudgeSpec::Scripted { path } => {
                let judge = ScriptedJudge::from_file(path)
                    .map_err(|e| PipelineError::Config(e.to_string()))?;
                Ok(Box::new(judge))
            }
            JudgeSpec::Remote {
                url,
                timeout_ms,
                max_in_flight,
            } => Ok(Box::new(RemoteJudge::new(
                url.clone(),
                timeout_ms.map_or(DEFAULT_CALL_TIMEOUT, Duration::from_millis),
                max_in_flight.unwrap_or(4),
            ))),
        }
    }
}

/// Drift-detection settings for the trend history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftConfig {
    pub window_days: i64,
    pub threshold: f64,
    pub mode: DriftMode,
    /// Restrict drift checks to one KPI; all recorded KPIs otherwise.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kpi: Option<String>,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            window_days: DRIFT_WINDOW_DAYS,
            threshold: DRIFT_THRESHOLD,
            mode: DriftMode::Relative,
            kpi: None,
        }
    }
}

fn default_layers() -> Vec<u8> {
    vec![0, 1, 2, 3, 4]
}

fn default_workers() -> usize {
    4
}

fn default_per_run_pass_threshold() -> f64 {
    crate::gates::DEFAULT_PER_RUN_PASS_THRESHOLD
}

fn default_consistency_runs() -> usize {
    10
}

fn default_handoff_pairs() -> usize {
    1
}

fn default_regression_margin() -> f64 {
    REGRESSION_MARGIN
}

/// Everything one `ape` invocation needs, from one JSON file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Version label of the model behind the SUT, recorded in run records.
    pub model_version: String,
    #[serde(default)]
    pub datasets: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter: Option<AdapterSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub judge: Option<JudgeSpec>,
    /// Rubric file scored by the judge at layer 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rubrics: Option<PathBuf>,
    #[serde(default)]
    pub gates: GatePolicy,
    #[serde(default)]
    pub rag_gates: RagGates,
    #[serde(default = "default_layers")]
    pub layers_enabled: Vec<u8>,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_per_run_pass_threshold")]
    pub per_run_pass_threshold: f64,
    #[serde(default = "default_consistency_runs")]
    pub consistency_runs: usize,
    /// Prompt dependency edges: each key consumes output of the prompts it lists.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub depends_on: BTreeMap<String, Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_store: Option<PathBuf>,
    #[serde(default = "default_regression_margin")]
    pub regression_margin: f64,
    #[serde(default)]
    pub drift: DriftConfig,
    /// RAG sample fixture (object or array) evaluated at layer 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rag_fixture: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub handoff_scenarios: Option<PathBuf>,
    /// Baseline/variation pairs run per handoff scenario.
    #[serde(default = "default_handoff_pairs")]
    pub handoff_pairs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub injection_scenarios: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retention_scenarios: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal_tasks: Option<PathBuf>,
}

fn resolve(base: &Path, path: &mut PathBuf) {
    if path.is_relative() {
        *path = base.join(&*path);
    }
}

fn must_exist(path: &Path, what: &str) -> Result<(), PipelineError> {
    if path.exists() {
        Ok(())
    } else {
        Err(PipelineError::Config(format!(
            "{what} {} does not exist",
            path.display()
        )))
    }
}

impl PipelineConfig {
    /// Loads a config file, resolves its paths against the file's directory,
    /// and validates it.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            PipelineError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let mut config: PipelineConfig = serde_json::from_str(&text).map_err(|e| {
            PipelineError::Config(format!("cannot parse config {}: {e}", path.display()))
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        for dataset in &mut config.datasets {
            resolve(base, dataset);
        }
        if let Some(AdapterSpec::Scripted { path }) = &mut config.adapter {
            resolve(base, path);
        }
        if let Some(JudgeSpec::Scripted { path }) = &mut config.judge {
            resolve(base, path);
        }
        for optional in [
            &mut config.rubrics,
            &mut config.baseline_store,
            &mut config.rag_fixture,
            &mut config.handoff_scenarios,
            &mut config.injection_scenarios,
            &mut config.retention_scenarios,
            &mut config.goal_tasks,
        ] {
            if let Some(p) = optional {
                resolve(base, p);
            }
        }
        config.validate()?;
        Ok(config)
    }

    /// Invariants plus existence of every referenced file. The baseline
    /// store directory is exempt: it is created on first write.
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.model_version.trim().is_empty() {
            return Err(PipelineError::Config("model_version is empty".into()));
        }
        if self.layers_enabled.is_empty() {
            return Err(PipelineError::Config(
                "at least one layer must be enabled".into(),
            ));
        }
        if let Some(bad) = self.layers_enabled.iter().find(|layer| **layer > 4) {
            return Err(PipelineError::Config(format!(
                "layer {bad} is outside 0..=4"
            )));
        }
        if self.workers == 0 {
            return Err(PipelineError::Config("workers must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.per_run_pass_threshold) {
            return Err(PipelineError::Config(format!(
                "per_run_pass_threshold {} is outside [0, 1]",
                self.per_run_pass_threshold
            )));
        }
        if self.consistency_runs == 0 {
            return Err(PipelineError::Config(
                "consistency_runs must be positive".into(),
            ));
        }
        if self.handoff_pairs == 0 {
            return Err(PipelineError::Config("handoff_pairs must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.regression_margin) {
            return Err(PipelineError::Config(format!(
                "regression_margin {} is outside [0, 1]",
                self.regression_margin
            )));
        }
        if self.drift.window_days <= 0 {
            return Err(PipelineError::Config(
                "drift.window_days must be positive".into(),
            ));
        }
        self.rag_gates
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        for dataset in &self.datasets {
            must_exist(dataset, "dataset")?;
        }
        if let Some(AdapterSpec::Scripted { path }) = &self.adapter {
            must_exist(path, "scripted adapter file")?;
        }
        if let Some(JudgeSpec::Scripted { path }) = &self.judge {
            must_exist(path, "scripted judge file")?;
        }
        for (what, optional) in [
            ("rubric file", &self.rubrics),
            ("rag fixture", &self.rag_fixture),
            ("handoff scenario file", &self.handoff_scenarios),
            ("injection scenario file", &self.injection_scenarios),
            ("retention scenario file", &self.retention_scenarios),
            ("goal task file", &self.goal_tasks),
        ] {
            if let Some(path) = optional {
                must_exist(path, what)?;
            }
        }
        Ok(())
    }

    /// Layers to run, deduplicated ascending.
    pub fn layers(&self) -> Vec<u8> {
        let mut layers = self.layers_enabled.clone();
        layers.sort_unstable();
        layers.dedup();
        layers
    }

    pub fn prompt_graph(&self) -> PromptGraph {
        PromptGraph {
            depends_on: self.depends_on.clone(),
        }
    }

    /// Hash of the effective configuration, recorded on every run. Worker
    /// count is excluded: parallelism must not change what a run means.
    pub fn fingerprint(&self) -> String {
        let mut semantic = self.clone();
        semantic.workers = 0;
        let canonical = serde_json::to_string(&semantic).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut out = String::with_capacity(16);
        for byte in digest.iter().take(8) {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}

/// One RAG fixture sample: the sample fields plus a scripted relevancy
/// score standing in for the relevancy judge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RagSampleFixture {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
    pub query: String,
    pub retrieved: Vec<String>,
    pub response: String,
    #[serde(default)]
    pub response_claims: Vec<String>,
    #[serde(default)]
    pub reference_claims: Vec<String>,
    /// Indices of retrieved chunks relevant to the query (scripted relevance
    /// judgment). Absent means every chunk counts as relevant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevant_chunks: Option<Vec<usize>>,
    /// Scripted answer-relevancy score standing in for the relevancy judge.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub relevancy: Option<f64>,
}

impl RagSampleFixture {
    pub fn sample(&self) -> RagSample {
        RagSample {
            query: self.query.clone(),
            retrieved: self.retrieved.clone(),
            response: self.response.clone(),
            response_claims: self.response_claims.clone(),
            reference_claims: self.reference_claims.clone(),
        }
    }

    /// Loads a fixture file holding one sample object or an array of them.
    pub fn load_file(path: &Path) -> Result<Vec<RagSampleFixture>, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            PipelineError::Config(format!("cannot read {}: {e}", path.display()))
        })?;
        let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
            PipelineError::Config(format!("cannot parse {}: {e}", path.display()))
        })?;
        let parsed = if value.is_array() {
            serde_json::from_value(value)
        } else {
            serde_json::from_value(value).map(|one| vec![one])
        };
        parsed.map_err(|e| PipelineError::Config(format!("bad rag fixture {}: {e}", path.display())))
    }
}

/// A recorded multi-agent transcript with the retention checks to apply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetentionScenario {
    pub scenario_id: String,
    pub transcript: Vec<Turn>,
    pub checks: Vec<RetentionCheck>,
}

/// Loads a JSON array fixture file.
pub fn load_json_array<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, PipelineError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| PipelineError::Config(format!("cannot parse {}: {e}", path.display())))
}

pub(crate) fn load_handoff_scenarios(path: &Path) -> Result<Vec<HandoffScenario>, PipelineError> {
    let scenarios: Vec<HandoffScenario> = load_json_array(path)?;
    for scenario in &scenarios {
        let violations = scenario.validate();
        if !violations.is_empty() {
            return Err(PipelineError::Config(format!(
                "handoff scenario {}: {}",
                scenario.scenario_id,
                violations.join("; ")
            )));
        }
    }
    Ok(scenarios)
}

pub(crate) fn load_injection_scenarios(
    path: &Path,
) -> Result<Vec<InjectionScenario>, PipelineError> {
    load_json_array(path)
}

pub(crate) fn load_goal_tasks(path: &Path) -> Result<Vec<GoalTask>, PipelineError> {
    let tasks: Vec<GoalTask> = load_json_array(path)?;
    for task in &tasks {
        let violations = task.validate();
        if !violations.is_empty() {
            return Err(PipelineError::Config(format!(
                "goal task {}: {}",
                task.task_id,
                violations.join("; ")
            )));
        }
    }
    Ok(tasks)
}
