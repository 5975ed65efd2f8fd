//! Shared data model: golden datasets, dimension scores, run records, KPIs.
//!
//! A golden dataset binds one prompt version to a list of cases, each with an
//! input, a scenario label, and exactly one expectation (a reference output or
//! a list of rubric ids). Datasets are plain JSON files; unknown fields are
//! rejected so that typos fail loudly instead of silently weakening coverage.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::agent::TrajectoryExpectation;
use crate::gates::GateResult;
use crate::layer0::{SchemaSpec, TemplateRequirements, ValidationResult};

/// Scenario label describing why a case is in the dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Normal,
    EdgeCase,
    Ambiguous,
    Unsafe,
    Adversarial,
    Jailbreak,
    PreviouslyFailing,
}

impl ScenarioKind {
    /// Scenarios that exercise the guardrail (used for the guardrail KPI).
    pub fn is_adversarial(self) -> bool {
        matches!(
            self,
            ScenarioKind::Unsafe | ScenarioKind::Adversarial | ScenarioKind::Jailbreak
        )
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScenarioKind::Normal => "normal",
            ScenarioKind::EdgeCase => "edge_case",
            ScenarioKind::Ambiguous => "ambiguous",
            ScenarioKind::Unsafe => "unsafe",
            ScenarioKind::Adversarial => "adversarial",
            ScenarioKind::Jailbreak => "jailbreak",
            ScenarioKind::PreviouslyFailing => "previously_failing",
        };
        f.write_str(s)
    }
}

/// Reference to the prompt version a dataset evaluates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptRef {
    pub id: String,
    pub version: String,
    /// Template file for layer-0 structure validation, relative to the dataset file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_path: Option<PathBuf>,
}

/// One golden case: an input plus exactly one expectation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldenCase {
    pub id: String,
    pub input: String,
    pub scenario: ScenarioKind,
    /// Expected structured output, compared deterministically at layer 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_output: Option<Value>,
    /// Rubric ids scored by the judge at layer 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rubrics: Option<Vec<String>>,
    /// Optional layer-2 expectation on the trajectory behind the response.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<TrajectoryExpectation>,
}

/// Layer-0 specs embedded in a dataset (or its `layer0.json` sidecar).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer0Spec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<SchemaSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_requirements: Option<TemplateRequirements>,
}

impl Layer0Spec {
    pub fn is_empty(&self) -> bool {
        self.schema.is_none() && self.template_requirements.is_none()
    }
}

/// A golden dataset: the versioned unit of evaluation for one prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalDataset {
    pub dataset_id: String,
    pub prompt: PromptRef,
    /// Minimum acceptable per-dimension aggregate scores, each in [0, 1].
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub thresholds: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer0: Option<Layer0Spec>,
    pub cases: Vec<GoldenCase>,
}

/// One violated dataset invariant, with a path pointing at the offender.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("invalid dataset: {}", format_violations(.violations))]
    Invalid { violations: Vec<Violation> },
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(Violation::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Loads and fully validates a dataset file.
///
/// Parsing is strict (unknown fields and unknown scenario labels are errors);
/// semantic problems are reported all at once as [`DatasetError::Invalid`].
pub fn load_dataset(path: &Path) -> Result<EvalDataset, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let dataset: EvalDataset =
        serde_json::from_str(&text).map_err(|source| DatasetError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
    let violations = validate_dataset(&dataset);
    if violations.is_empty() {
        Ok(dataset)
    } else {
        Err(DatasetError::Invalid { violations })
    }
}

/// Checks every dataset invariant and returns all violations found.
pub fn validate_dataset(dataset: &EvalDataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |path: String, message: String| out.push(Violation { path, message });

    if dataset.dataset_id.trim().is_empty() {
        push("dataset_id".into(), "must be non-empty".into());
    }
    if dataset.prompt.id.trim().is_empty() {
        push("prompt.id".into(), "must be non-empty".into());
    }
    if dataset.prompt.version.trim().is_empty() {
        push("prompt.version".into(), "must be non-empty".into());
    }
    for (dimension, value) in &dataset.thresholds {
        if !(0.0..=1.0).contains(value) {
            push(
                format!("thresholds.{dimension}"),
                format!("{value} is outside [0, 1]"),
            );
        }
    }
    if dataset.cases.is_empty() {
        push("cases".into(), "must contain at least one case".into());
    }

    let mut seen = BTreeSet::new();
    for (index, case) in dataset.cases.iter().enumerate() {
        let at = |field: &str| format!("cases[{index}].{field}");
        if case.id.trim().is_empty() {
            push(at("id"), "must be non-empty".into());
        } else if !seen.insert(case.id.clone()) {
            push(at("id"), format!("duplicate case id {:?}", case.id));
        }
        if case.input.is_empty() {
            push(at("input"), "must be non-empty".into());
        }
        match (&case.reference_output, &case.rubrics) {
            (Some(_), Some(_)) => push(
                at("reference_output"),
                "a case takes either a reference_output or rubrics, not both".into(),
            ),
            (None, None) => push(
                at("reference_output"),
                "a case needs a reference_output or rubrics".into(),
            ),
            (None, Some(rubrics)) if rubrics.is_empty() => {
                push(at("rubrics"), "must list at least one rubric id".into())
            }
            _ => {}
        }
        if let Some(expectation) = &case.trajectory {
            for message in expectation.validate() {
                push(at("trajectory"), message);
            }
        }
    }
    out
}

/// Scores per evaluation dimension. Rubric-scored dimensions are 0 or 1;
/// continuous metric dimensions live in [0, 1].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DimensionScores(pub BTreeMap<String, f64>);

impl DimensionScores {
    pub fn new() -> Self {
        Self(BTreeMap::new())
    }

    pub fn get(&self, dimension: &str) -> Option<f64> {
        self.0.get(dimension).copied()
    }

    pub fn insert(&mut self, dimension: impl Into<String>, score: f64) {
        self.0.insert(dimension.into(), score);
    }

    /// Range check for every stored score.
    pub fn validate(&self) -> Vec<Violation> {
        self.0
            .iter()
            .filter(|(_, v)| !(0.0..=1.0).contains(*v))
            .map(|(k, v)| Violation {
                path: k.clone(),
                message: format!("score {v} is outside [0, 1]"),
            })
            .collect()
    }
}

impl FromIterator<(String, f64)> for DimensionScores {
    fn from_iter<T: IntoIterator<Item = (String, f64)>>(iter: T) -> Self {
        Self(iter.into_iter().collect())
    }
}

/// Error information for a failed SUT call, kept on the case result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseError {
    pub kind: String,
    pub message: String,
}

/// Layer-2 evaluation attached to a case, when the dataset declares a
/// trajectory expectation and the SUT returned a transcript.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseTrajectoryResult {
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_divergence: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_call_accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unnecessary_call_rate: Option<f64>,
}

/// Everything recorded about one case in one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<CaseError>,
    pub scores: DimensionScores,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gate: Option<GateResult>,
    /// Layer-0 structured-output check against the reference, when applicable.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structure: Option<ValidationResult>,
    /// Layer-0 schema check, when the dataset declares a schema.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<ValidationResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory: Option<CaseTrajectoryResult>,
}

/// Audit record of one evaluation run of one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    #[serde(with = "rfc3339_seconds")]
    pub timestamp: DateTime<Utc>,
    pub dataset_id: String,
    pub prompt_version: String,
    pub model_version: String,
    pub config_fingerprint: String,
    pub cases: Vec<CaseResult>,
    /// Mean score per dimension across all cases.
    pub aggregates: BTreeMap<String, f64>,
    /// Dataset-level KPIs (pass rates, adherence rates) from the enabled layers.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub kpis: BTreeMap<String, f64>,
}

impl RunRecord {
    /// Dimension aggregates and dataset KPIs as one flat metric map, the
    /// unit that baselines and trend history track.
    pub fn metrics(&self) -> BTreeMap<String, f64> {
        let mut out = self.aggregates.clone();
        out.extend(self.kpis.iter().map(|(k, v)| (k.clone(), *v)));
        out
    }

    /// Every case id exactly once, in case order.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        for case in &self.cases {
            if !seen.insert(case.case_id.clone()) {
                out.push(Violation {
                    path: format!("cases.{}", case.case_id),
                    message: "case id appears more than once".into(),
                });
            }
        }
        let required = [
            ("run_id", &self.run_id),
            ("model_version", &self.model_version),
            ("config_fingerprint", &self.config_fingerprint),
        ];
        for (field, value) in required {
            if value.trim().is_empty() {
                out.push(Violation {
                    path: field.into(),
                    message: "must be non-empty".into(),
                });
            }
        }
        out
    }
}

/// Fixed-format RFC 3339 timestamps (whole seconds, `Z` suffix) so that
/// serialized reports are byte-stable.
pub mod rfc3339_seconds {
    use chrono::{DateTime, SecondsFormat, Utc};
    use serde::{self, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(dt: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&dt.to_rfc3339_opts(SecondsFormat::Secs, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let text = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&text)
            .map(|dt| dt.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

/// KPI names reportable at each pyramid layer.
pub fn layer_kpi_vocabulary(layer: u8) -> &'static [&'static str] {
    match layer {
        0 => &[
            "tool_reliability_rate",
            "schema_adherence_rate",
            "prompt_structure_compliance",
            "defect_leakage_rate",
        ],
        1 => &[
            "prompt_pass_rate",
            "prompt_regression_rate",
            "context_precision",
            "context_recall",
            "tool_routing_accuracy",
            "guardrail_trigger_rate",
        ],
        2 => &[
            "trajectory_correctness_rate",
            "tool_call_accuracy",
            "unnecessary_call_rate",
            "instruction_adherence_rate",
            "single_agent_task_success_rate",
        ],
        3 => &[
            "agent_handoff_accuracy",
            "state_retention_across_agents",
            "recovery_success_rate",
            "trajectory_efficiency_score",
            "multi_agent_task_success_rate",
        ],
        4 => &[
            "agent_goal_completion_rate",
            "factual_accuracy_score",
            "business_rule_compliance_rate",
            "hallucination_rate",
            "end_to_end_regression_pass_rate",
        ],
        _ => &[],
    }
}

/// KPI values measured at one pyramid layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiSet {
    pub layer: u8,
    pub values: BTreeMap<String, f64>,
}

impl KpiSet {
    pub fn new(layer: u8) -> Self {
        Self {
            layer,
            values: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, value: f64) {
        self.values.insert(name.to_string(), value);
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Layer must be 0–4, names must belong to the layer's vocabulary, and
    /// every value must be a fraction in [0, 1].
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.layer > 4 {
            out.push(Violation {
                path: "layer".into(),
                message: format!("layer {} is outside 0..=4", self.layer),
            });
            return out;
        }
        let vocabulary = layer_kpi_vocabulary(self.layer);
        for (name, value) in &self.values {
            if !vocabulary.contains(&name.as_str()) {
                out.push(Violation {
                    path: name.clone(),
                    message: format!("not a layer-{} KPI", self.layer),
                });
            }
            if !(0.0..=1.0).contains(value) {
                out.push(Violation {
                    path: name.clone(),
                    message: format!("value {value} is outside [0, 1]"),
                });
            }
        }
        out
    }
}
