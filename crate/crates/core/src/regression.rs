//! Baselines, regression comparison, drift detection, triage, and
//! change-triggered evaluation planning.
//!
//! A baseline is a blessed run record for a (dataset, prompt version) pair.
//! New runs compare against it per aggregate KPI; declines beyond a margin
//! regress. Trend series over daily runs feed drift detection; symptom
//! triage maps observed production behaviour to the layer to check first;
//! change events expand to evaluation plans saying what to rerun and
//! whether the result gates deployment.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::model::{rfc3339_seconds, EvalDataset, RunRecord, ScenarioKind};
use crate::round6;
use crate::sut::{SutAdapter, SutRequest};

/// Default decline margin before a KPI counts as regressed.
pub const REGRESSION_MARGIN: f64 = 0.05;

/// Default trend window, in days, required before drift is evaluated.
pub const DRIFT_WINDOW_DAYS: i64 = 7;

/// Default relative decline beyond which drift is flagged.
pub const DRIFT_THRESHOLD: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum RegressionError {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("no baseline recorded for dataset {dataset_id} on model {model_version}")]
    NoBaseline {
        dataset_id: String,
        model_version: String,
    },
    #[error("dataset mismatch: run is for {run} but baseline is for {baseline}")]
    DatasetMismatch { run: String, baseline: String },
    #[error("{0}")]
    Invalid(String),
}

/// A blessed run used as the comparison point for later runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Baseline {
    pub dataset_id: String,
    pub prompt_version: String,
    pub model_version: String,
    pub run_id: String,
    #[serde(with = "rfc3339_seconds")]
    pub recorded_at: DateTime<Utc>,
    /// Metric values (dimension aggregates and dataset KPIs) from the
    /// blessed run.
    pub aggregates: BTreeMap<String, f64>,
}

impl Baseline {
    pub fn from_run(record: &RunRecord) -> Self {
        Self {
            dataset_id: record.dataset_id.clone(),
            prompt_version: record.prompt_version.clone(),
            model_version: record.model_version.clone(),
            run_id: record.run_id.clone(),
            recorded_at: record.timestamp,
            aggregates: record.metrics(),
        }
    }
}

/// Per-KPI comparison of a run against a baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiComparison {
    pub kpi: String,
    pub baseline: f64,
    pub current: f64,
    /// Positive when the KPI declined.
    pub decline: f64,
    pub regressed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub baseline_run_id: String,
    pub current_run_id: String,
    pub margin: f64,
    pub comparisons: Vec<KpiComparison>,
    /// KPIs present on only one side.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub unmatched_kpis: Vec<String>,
    pub regressed: bool,
}

/// Compares a run's aggregates against a baseline. A KPI regresses when it
/// declines by strictly more than `margin`. KPIs present on only one side
/// are reported but do not regress.
pub fn compare_to_baseline(
    record: &RunRecord,
    baseline: &Baseline,
    margin: f64,
) -> Result<RegressionReport, RegressionError> {
    if record.dataset_id != baseline.dataset_id {
        return Err(RegressionError::DatasetMismatch {
            run: record.dataset_id.clone(),
            baseline: baseline.dataset_id.clone(),
        });
    }
    if !(0.0..=1.0).contains(&margin) {
        return Err(RegressionError::Invalid(format!(
            "margin {margin} must lie in [0, 1]"
        )));
    }
    let current_metrics = record.metrics();
    let mut comparisons = Vec::new();
    let mut unmatched: BTreeSet<String> = BTreeSet::new();
    for (kpi, &base_value) in &baseline.aggregates {
        match current_metrics.get(kpi) {
            Some(&current) => {
                let decline = round6(base_value - current);
                comparisons.push(KpiComparison {
                    kpi: kpi.clone(),
                    baseline: base_value,
                    current,
                    decline,
                    regressed: decline > margin,
                });
            }
            None => {
                unmatched.insert(kpi.clone());
            }
        }
    }
    for kpi in current_metrics.keys() {
        if !baseline.aggregates.contains_key(kpi) {
            unmatched.insert(kpi.clone());
        }
    }
    let regressed = comparisons.iter().any(|c| c.regressed);
    Ok(RegressionReport {
        baseline_run_id: baseline.run_id.clone(),
        current_run_id: record.run_id.clone(),
        margin,
        comparisons,
        unmatched_kpis: unmatched.into_iter().collect(),
        regressed,
    })
}

/// On-disk store of run records, active baselines, and KPI trend history.
///
/// Layout under the root directory:
/// - `runs/<dataset>/<NNNN>-<run_id>.json`: appended run records
/// - `active.json`: dataset id to model version to baseline
/// - `trends.csv`: one row per (run, kpi)
pub struct BaselineStore {
    root: PathBuf,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct ActiveBaselines {
    #[serde(default)]
    baselines: BTreeMap<String, BTreeMap<String, Baseline>>,
}

impl BaselineStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, RegressionError> {
        let root = root.into();
        fs::create_dir_all(root.join("runs")).map_err(|source| RegressionError::Io {
            path: root.clone(),
            source,
        })?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn active_path(&self) -> PathBuf {
        self.root.join("active.json")
    }

    fn trends_path(&self) -> PathBuf {
        self.root.join("trends.csv")
    }

    fn read_active(&self) -> Result<ActiveBaselines, RegressionError> {
        let path = self.active_path();
        if !path.exists() {
            return Ok(ActiveBaselines::default());
        }
        let text = fs::read_to_string(&path).map_err(|source| RegressionError::Io {
            path: path.clone(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| RegressionError::Parse {
            path,
            message: e.to_string(),
        })
    }

    fn write_active(&self, active: &ActiveBaselines) -> Result<(), RegressionError> {
        let path = self.active_path();
        let text = serde_json::to_string_pretty(active).expect("baselines serialize");
        fs::write(&path, text).map_err(|source| RegressionError::Io { path, source })
    }

    /// Appends a run record and its metrics (dimension aggregates and
    /// dataset KPIs) to the trend history.
    pub fn record_run(&self, record: &RunRecord) -> Result<PathBuf, RegressionError> {
        let dir = self.root.join("runs").join(&record.dataset_id);
        fs::create_dir_all(&dir).map_err(|source| RegressionError::Io {
            path: dir.clone(),
            source,
        })?;
        let seq = fs::read_dir(&dir)
            .map_err(|source| RegressionError::Io {
                path: dir.clone(),
                source,
            })?
            .count();
        let path = dir.join(format!("{seq:04}-{}.json", record.run_id));
        let text = serde_json::to_string_pretty(record).expect("run record serializes");
        fs::write(&path, text).map_err(|source| RegressionError::Io {
            path: path.clone(),
            source,
        })?;
        self.append_trends(record)?;
        Ok(path)
    }

    fn append_trends(&self, record: &RunRecord) -> Result<(), RegressionError> {
        let path = self.trends_path();
        let fresh = !path.exists();
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|source| RegressionError::Io {
                path: path.clone(),
                source,
            })?;
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            writer
                .write_record(["timestamp", "dataset_id", "prompt_version", "run_id", "kpi", "value"])
                .map_err(|e| RegressionError::Parse {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
        }
        for (kpi, value) in record.metrics() {
            writer
                .write_record([
                    record
                        .timestamp
                        .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
                        .as_str(),
                    &record.dataset_id,
                    &record.prompt_version,
                    &record.run_id,
                    &kpi,
                    &format!("{}", round6(value)),
                ])
                .map_err(|e| RegressionError::Parse {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
        }
        writer.flush().map_err(|source| RegressionError::Io { path, source })?;
        Ok(())
    }

    /// Blesses a run as the active baseline for its dataset and model
    /// version. There is at most one active baseline per pair; blessing
    /// replaces the previous one.
    pub fn set_baseline(&self, record: &RunRecord) -> Result<Baseline, RegressionError> {
        let baseline = Baseline::from_run(record);
        let mut active = self.read_active()?;
        active
            .baselines
            .entry(baseline.dataset_id.clone())
            .or_default()
            .insert(baseline.model_version.clone(), baseline.clone());
        self.write_active(&active)?;
        Ok(baseline)
    }

    pub fn active_baseline(
        &self,
        dataset_id: &str,
        model_version: &str,
    ) -> Result<Baseline, RegressionError> {
        self.read_active()?
            .baselines
            .get(dataset_id)
            .and_then(|by_model| by_model.get(model_version))
            .cloned()
            .ok_or_else(|| RegressionError::NoBaseline {
                dataset_id: dataset_id.into(),
                model_version: model_version.into(),
            })
    }

    /// Distinct KPI names recorded for a dataset, in name order.
    pub fn kpis(&self, dataset_id: &str) -> Result<Vec<String>, RegressionError> {
        let path = self.trends_path();
        let mut names = BTreeSet::new();
        if path.exists() {
            let mut reader = csv::Reader::from_path(&path).map_err(|e| RegressionError::Parse {
                path: path.clone(),
                message: e.to_string(),
            })?;
            for row in reader.deserialize::<TrendRow>() {
                let row = row.map_err(|e| RegressionError::Parse {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                if row.dataset_id == dataset_id {
                    names.insert(row.kpi);
                }
            }
        }
        Ok(names.into_iter().collect())
    }

    /// Trend points for one dataset and KPI, in recorded order.
    pub fn trend(&self, dataset_id: &str, kpi: &str) -> Result<TrendSeries, RegressionError> {
        let path = self.trends_path();
        let mut points = Vec::new();
        if path.exists() {
            let mut reader = csv::Reader::from_path(&path).map_err(|e| RegressionError::Parse {
                path: path.clone(),
                message: e.to_string(),
            })?;
            for row in reader.deserialize::<TrendRow>() {
                let row = row.map_err(|e| RegressionError::Parse {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                if row.dataset_id == dataset_id && row.kpi == kpi {
                    let timestamp = DateTime::parse_from_rfc3339(&row.timestamp)
                        .map_err(|e| RegressionError::Parse {
                            path: path.clone(),
                            message: format!("bad timestamp {:?}: {e}", row.timestamp),
                        })?
                        .with_timezone(&Utc);
                    points.push(TrendPoint {
                        timestamp,
                        value: row.value,
                    });
                }
            }
        }
        TrendSeries::new(dataset_id.into(), kpi.into(), points)
    }
}

#[derive(Debug, Deserialize)]
struct TrendRow {
    timestamp: String,
    dataset_id: String,
    #[allow(dead_code)]
    prompt_version: String,
    #[allow(dead_code)]
    run_id: String,
    kpi: String,
    value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendPoint {
    #[serde(with = "rfc3339_seconds")]
    pub timestamp: DateTime<Utc>,
    pub value: f64,
}

/// Time-ordered KPI history for one dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSeries {
    pub dataset_id: String,
    pub kpi: String,
    pub points: Vec<TrendPoint>,
}

impl TrendSeries {
    pub fn new(
        dataset_id: String,
        kpi: String,
        points: Vec<TrendPoint>,
    ) -> Result<Self, RegressionError> {
        for pair in points.windows(2) {
            if pair[1].timestamp <= pair[0].timestamp {
                return Err(RegressionError::Invalid(format!(
                    "trend timestamps must strictly increase; {} does not follow {}",
                    pair[1].timestamp, pair[0].timestamp
                )));
            }
        }
        Ok(Self {
            dataset_id,
            kpi,
            points,
        })
    }
}

/// How a drift decline is measured.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    /// Decline as a fraction of the window-start value.
    #[default]
    Relative,
    /// Decline in absolute KPI units.
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum DriftOutcome {
    Evaluated {
        flagged: bool,
        /// Positive when the KPI declined over the window.
        decline: f64,
        window_start: f64,
        latest: f64,
        points_in_window: usize,
    },
    /// Fewer than two points, or the series does not yet span the window.
    InsufficientData { reason: String },
}

/// Evaluates gradual decline over the trailing window. The decline is
/// measured from the earliest point inside the window to the latest point;
/// relative mode divides by the window-start value. Flags when the decline
/// strictly exceeds `threshold`. Scale-invariant in relative mode.
pub fn detect_drift(
    series: &TrendSeries,
    window_days: i64,
    threshold: f64,
    mode: DriftMode,
) -> DriftOutcome {
    if series.points.len() < 2 {
        return DriftOutcome::InsufficientData {
            reason: format!(
                "need at least 2 trend points, have {}",
                series.points.len()
            ),
        };
    }
    let first = series.points.first().expect("non-empty");
    let latest = series.points.last().expect("non-empty");
    let span = latest.timestamp - first.timestamp;
    if span < chrono::Duration::days(window_days) {
        return DriftOutcome::InsufficientData {
            reason: format!(
                "series spans {} hours, needs {} days",
                span.num_hours(),
                window_days
            ),
        };
    }
    let window_open = latest.timestamp - chrono::Duration::days(window_days);
    let in_window: Vec<&TrendPoint> = series
        .points
        .iter()
        .filter(|p| p.timestamp >= window_open)
        .collect();
    let start = in_window.first().expect("latest point is always in window");
    let decline = match mode {
        DriftMode::Relative => {
            if start.value == 0.0 {
                0.0
            } else {
                (start.value - latest.value) / start.value
            }
        }
        DriftMode::Absolute => start.value - latest.value,
    };
    let decline = round6(decline);
    DriftOutcome::Evaluated {
        flagged: decline > threshold,
        decline,
        window_start: start.value,
        latest: latest.value,
        points_in_window: in_window.len(),
    }
}

/// Observable production symptom, named by its failure signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Symptom {
    ResponsesLessAccurate,
    WrongToolsIntermittently,
    WrongToolParameters,
    ContextLossMidway,
    OutputFormatBreaking,
    GuardrailMissingUnsafe,
    CorrectAnswerWrongReasoning,
}

impl Symptom {
    pub const ALL: [Symptom; 7] = [
        Symptom::ResponsesLessAccurate,
        Symptom::WrongToolsIntermittently,
        Symptom::WrongToolParameters,
        Symptom::ContextLossMidway,
        Symptom::OutputFormatBreaking,
        Symptom::GuardrailMissingUnsafe,
        Symptom::CorrectAnswerWrongReasoning,
    ];

    pub fn token(&self) -> &'static str {
        match self {
            Symptom::ResponsesLessAccurate => "responses-less-accurate",
            Symptom::WrongToolsIntermittently => "wrong-tools-intermittently",
            Symptom::WrongToolParameters => "wrong-tool-parameters",
            Symptom::ContextLossMidway => "context-loss-midway",
            Symptom::OutputFormatBreaking => "output-format-breaking",
            Symptom::GuardrailMissingUnsafe => "guardrail-missing-unsafe",
            Symptom::CorrectAnswerWrongReasoning => "correct-answer-wrong-reasoning",
        }
    }

    pub fn parse(token: &str) -> Option<Symptom> {
        Symptom::ALL.iter().copied().find(|s| s.token() == token)
    }
}

impl std::fmt::Display for Symptom {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

/// Where to look first for a symptom, and why it usually appears.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriageAdvice {
    pub symptom: Symptom,
    /// Pyramid layer to investigate first (0..=4).
    pub layer: u8,
    /// Test suite to run first.
    pub check_first: &'static str,
    pub likely_cause: &'static str,
}

/// Maps a symptom to the layer to check first and its likely cause.
pub fn triage(symptom: Symptom) -> TriageAdvice {
    let (layer, check_first, likely_cause) = match symptom {
        Symptom::ResponsesLessAccurate => (
            4,
            "Layer 4 regression suite",
            "Model drift or prompt degradation at output level",
        ),
        Symptom::WrongToolsIntermittently => (
            2,
            "Layer 2 trajectory tests",
            "Model update changed tool call behaviour",
        ),
        Symptom::WrongToolParameters => (
            2,
            "Layer 2 tool call accuracy",
            "Prompt change affected parameter construction logic",
        ),
        Symptom::ContextLossMidway => (
            3,
            "Layer 3 coordination tests",
            "State handoff between agents is breaking",
        ),
        Symptom::OutputFormatBreaking => (
            0,
            "Layer 0 prompt validation",
            "Prompt output structure has drifted from schema",
        ),
        Symptom::GuardrailMissingUnsafe => (
            1,
            "Layer 1 guardrail evaluation",
            "Model update reduced guardrail sensitivity",
        ),
        Symptom::CorrectAnswerWrongReasoning => (
            2,
            "Layer 2 trajectory tests",
            "False positive: fragile trajectory that will fail later",
        ),
    };
    TriageAdvice {
        symptom,
        layer,
        check_first,
        likely_cause,
    }
}

/// Event that triggers re-evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChangeEvent {
    ScheduledDaily,
    ModelVersionChange { new_model: String },
    PromptUpdate { prompt_id: String },
    ProductionIncident { prompt_id: String, symptom: Symptom },
}

/// Prompt dependency graph: `depends_on[a]` lists prompts `a` consumes
/// output from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptGraph {
    #[serde(default)]
    pub depends_on: BTreeMap<String, Vec<String>>,
}

impl PromptGraph {
    fn closure(&self, start: &str, edges: impl Fn(&str) -> Vec<String>) -> BTreeSet<String> {
        let mut seen: BTreeSet<String> = BTreeSet::new();
        let mut queue = vec![start.to_string()];
        seen.insert(start.to_string());
        while let Some(current) = queue.pop() {
            for next in edges(&current) {
                if seen.insert(next.clone()) {
                    queue.push(next);
                }
            }
        }
        seen
    }

    /// The prompt plus every prompt that transitively depends on it.
    pub fn dependents_of(&self, prompt_id: &str) -> BTreeSet<String> {
        self.closure(prompt_id, |current| {
            self.depends_on
                .iter()
                .filter(|(_, deps)| deps.iter().any(|d| d == current))
                .map(|(id, _)| id.clone())
                .collect()
        })
    }

    /// The prompt plus everything it transitively depends on.
    pub fn upstream_of(&self, prompt_id: &str) -> BTreeSet<String> {
        self.closure(prompt_id, |current| {
            self.depends_on.get(current).cloned().unwrap_or_default()
        })
    }
}

/// Which prompts an evaluation plan covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PlanScope {
    /// Every prompt's full suite.
    FullPromptSuite,
    /// All prompts (model change: everything is affected).
    AllPrompts,
    /// A specific prompt set.
    Prompts { prompts: BTreeSet<String> },
}

/// What to rerun after a change event, and whether failures block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationPlan {
    pub scope: PlanScope,
    /// Pyramid layers to run, ascending.
    pub layers: Vec<u8>,
    /// Whether failures block the change from deploying.
    pub blocking: bool,
}

/// Expands a change event into an evaluation plan:
///
/// - scheduled daily: full prompt suite, golden-dataset layer, non-blocking
/// - model version change: all prompts, all layers, blocking
/// - prompt update: the prompt and its dependents, structural and
///   golden-dataset layers, blocking
/// - production incident: the prompt and its upstream chain, the layer
///   triage points at, non-blocking (the incident already happened)
pub fn plan_triggers(event: &ChangeEvent, graph: &PromptGraph) -> EvaluationPlan {
    match event {
        ChangeEvent::ScheduledDaily => EvaluationPlan {
            scope: PlanScope::FullPromptSuite,
            layers: vec![1],
            blocking: false,
        },
        ChangeEvent::ModelVersionChange { .. } => EvaluationPlan {
            scope: PlanScope::AllPrompts,
            layers: vec![0, 1, 2, 3, 4],
            blocking: true,
        },
        ChangeEvent::PromptUpdate { prompt_id } => EvaluationPlan {
            scope: PlanScope::Prompts {
                prompts: graph.dependents_of(prompt_id),
            },
            layers: vec![0, 1],
            blocking: true,
        },
        ChangeEvent::ProductionIncident { prompt_id, symptom } => EvaluationPlan {
            scope: PlanScope::Prompts {
                prompts: graph.upstream_of(prompt_id),
            },
            layers: vec![triage(*symptom).layer],
            blocking: false,
        },
    }
}

/// A production failure to fold back into the golden dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Incident {
    pub failing_input: String,
    /// Reference output the fixed system should produce.
    pub expected_behaviour: serde_json::Value,
    /// Layer whose triage traced the incident, recorded for the case id.
    pub origin_layer: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageUpdate {
    pub case_id: String,
    /// Whether the pre-fix system demonstrably fails the new case; absent
    /// when no pre-fix adapter was supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verified_catches: Option<bool>,
}

/// Converts a production incident into a regression case appended to the
/// dataset. Refuses inputs the dataset already covers. When a pre-fix
/// adapter is supplied, verifies the new case actually catches the old
/// behaviour.
pub fn incident_to_coverage(
    dataset: &mut EvalDataset,
    incident: &Incident,
    pre_fix: Option<&dyn SutAdapter>,
) -> Result<CoverageUpdate, RegressionError> {
    if dataset
        .cases
        .iter()
        .any(|case| case.input == incident.failing_input)
    {
        return Err(RegressionError::Invalid(format!(
            "dataset {} already covers input {:?}",
            dataset.dataset_id, incident.failing_input
        )));
    }
    let mut seq = dataset.cases.len() + 1;
    let mut case_id = format!("incident-{seq}");
    while dataset.cases.iter().any(|case| case.id == case_id) {
        seq += 1;
        case_id = format!("incident-{seq}");
    }
    let verified_catches = pre_fix.map(|adapter| {
        let response = adapter.invoke(&SutRequest::new(incident.failing_input.clone()));
        match response.output {
            Some(output) => output != incident.expected_behaviour,
            None => true,
        }
    });
    dataset.cases.push(crate::model::GoldenCase {
        id: case_id.clone(),
        input: incident.failing_input.clone(),
        scenario: ScenarioKind::PreviouslyFailing,
        reference_output: Some(incident.expected_behaviour.clone()),
        rubrics: None,
        trajectory: None,
    });
    Ok(CoverageUpdate {
        case_id,
        verified_catches,
    })
}
