//! Command implementations behind the CLI: layered runs, consistency
//! analysis, offline gate application, drift checks, and baseline
//! management. Each command returns a report struct that serializes to the
//! versioned JSON report format and carries the exit code it earned.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::agent::{
    evaluate_goal_completion, evaluate_state_retention, evaluate_trajectory_rubric,
    match_reference_trajectory, run_failure_injection, run_handoff_scenario_repeated,
    score_tool_calls, ExpectedCall, GoalOutcome, HandoffOutcome, InjectionOutcome, ParamsMatcher,
    ReferenceTrajectory, RetentionOutcome, Trajectory, TrajectoryExpectation, TrajectoryMatch,
};
use crate::gates::{
    apply_thresholds, evaluate_gates, ConsistencyReport, ConsistencyVerdict, GatePolicy,
    GateResult, ThresholdOutcome, DIM_FACTUAL_CORRECTNESS, DIM_SAFETY_COMPLIANCE,
};
use crate::judge::{load_rubrics, score_dimensions, Judge, JudgeError, Rubric};
use crate::layer0::{
    validate_prompt_template, validate_schema, validate_structure, StructSpec, ValidationResult,
};
use crate::model::{
    load_dataset, CaseError, CaseResult, CaseTrajectoryResult, DimensionScores, EvalDataset,
    GoldenCase, KpiSet, RunRecord, ScenarioKind,
};
use crate::pipeline::config::{
    load_goal_tasks, load_handoff_scenarios, load_injection_scenarios, load_json_array,
    PipelineConfig, PipelineError, RagSampleFixture, RetentionScenario,
};
use crate::rag::{
    answer_relevancy, apply_rag_gates, context_precision, context_recall, diagnose_rag,
    faithfulness, substring_support, RagDiagnosis, RagGateOutcome, RagProfile,
};
use crate::regression::{
    compare_to_baseline, detect_drift, plan_triggers, BaselineStore, ChangeEvent, DriftOutcome,
    EvaluationPlan, PlanScope, RegressionError, RegressionReport,
};
use crate::round6;
use crate::sut::{SutAdapter, SutRequest, SutResponse};

/// Schema version stamped on every report file.
pub const REPORT_VERSION: u32 = 1;

/// Options shared by the run-shaped commands.
#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Clock used for run timestamps; pin it to make reports byte-stable.
    pub now: DateTime<Utc>,
    pub trigger: Option<ChangeEvent>,
    /// Keep evaluating higher layers after a blocking layer-0 failure.
    pub continue_on_layer_failure: bool,
    /// Restrict the run to these dataset ids.
    pub dataset_ids: Option<Vec<String>>,
}

impl RunOptions {
    pub fn new(now: DateTime<Utc>) -> Self {
        Self {
            now,
            trigger: None,
            continue_on_layer_failure: false,
            dataset_ids: None,
        }
    }
}

/// Full report of one `run` (or baseline) invocation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub report_version: u32,
    pub command: String,
    pub model_version: String,
    pub config_fingerprint: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trigger: Option<ChangeEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plan: Option<EvaluationPlan>,
    /// Whether gate failures fail the invocation (monitoring triggers don't).
    pub blocking: bool,
    pub layers_enabled: Vec<u8>,
    pub datasets: Vec<DatasetReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rag: Option<RagReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suites: Option<SuiteReport>,
    pub gates_passed: bool,
    pub exit_code: u8,
}

/// Per-dataset slice of a run report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetReport {
    pub dataset_id: String,
    pub prompt_id: String,
    pub prompt_version: String,
    /// Static prompt-template validation, when the dataset declares one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_layer0: Option<ValidationResult>,
    /// True when a blocking layer-0 failure stopped the higher layers.
    pub short_circuited: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<RunRecord>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub layers: Vec<KpiSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<ThresholdOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regression: Option<RegressionReport>,
    pub passed: bool,
}

/// RAG fixture evaluation attached to a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RagSampleReport {
    pub sample_id: String,
    pub profile: RagProfile,
    pub gates: RagGateOutcome,
    pub diagnosis: RagDiagnosis,
    pub diagnosis_description: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RagReport {
    pub samples: Vec<RagSampleReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kpis: Option<KpiSet>,
    pub deploy_approved: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetentionSuiteOutcome {
    pub scenario_id: String,
    #[serde(flatten)]
    pub outcome: RetentionOutcome,
}

/// Layer-3/4 scenario suites evaluated once per run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteReport {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub handoff: Vec<HandoffOutcome>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub injection: Vec<InjectionOutcome>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub retention: Vec<RetentionSuiteOutcome>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub goals: Vec<GoalOutcome>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub layers: Vec<KpiSet>,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BaselineAction {
    /// Record runs and compare when a baseline exists.
    Record,
    /// Record, then bless the run as the new baseline if it passed.
    Set,
    /// Record and compare; a missing baseline is an error and a regression
    /// fails the invocation.
    Compare,
}

fn judge_error(error: JudgeError) -> PipelineError {
    match error {
        JudgeError::Unavailable(_) | JudgeError::Malformed(_) => {
            PipelineError::Infra(error.to_string())
        }
        JudgeError::MissingReference { .. } | JudgeError::Config(_) => {
            PipelineError::Config(error.to_string())
        }
    }
}

fn store_error(error: RegressionError) -> PipelineError {
    match error {
        RegressionError::Io { .. } => PipelineError::Infra(error.to_string()),
        other => PipelineError::Config(other.to_string()),
    }
}

fn canonical_text(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn hex_prefix(digest: &[u8], bytes: usize) -> String {
    let mut out = String::with_capacity(bytes * 2);
    for byte in digest.iter().take(bytes) {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

fn derive_run_id(fingerprint: &str, dataset_id: &str, now: DateTime<Utc>) -> String {
    let mut hasher = Sha256::new();
    hasher.update(fingerprint.as_bytes());
    hasher.update(dataset_id.as_bytes());
    hasher.update(
        now.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
            .as_bytes(),
    );
    format!("run-{}", hex_prefix(&hasher.finalize(), 6))
}

#[derive(Default)]
struct InvocationStats {
    total: usize,
    errors: usize,
    last_error: Option<String>,
}

struct CaseContext<'a> {
    dataset: &'a EvalDataset,
    adapter: &'a dyn SutAdapter,
    judge: Option<&'a dyn Judge>,
    policy: &'a GatePolicy,
    layer0: bool,
    layer1: bool,
    layer2: bool,
}

/// Executes the enabled layers over the configured datasets and suites.
pub fn cmd_run(config: &PipelineConfig, opts: &RunOptions) -> Result<RunReport, PipelineError> {
    run_internal(config, opts, BaselineAction::Record)
}

/// Runs the datasets and, when every gate passes, blesses each run record as
/// the active baseline for its dataset and prompt version.
pub fn cmd_baseline_set(
    config: &PipelineConfig,
    opts: &RunOptions,
) -> Result<RunReport, PipelineError> {
    run_internal(config, opts, BaselineAction::Set)
}

/// Runs the datasets and compares each against its active baseline; a
/// regression beyond the configured margin fails the invocation.
pub fn cmd_baseline_compare(
    config: &PipelineConfig,
    opts: &RunOptions,
) -> Result<RunReport, PipelineError> {
    run_internal(config, opts, BaselineAction::Compare)
}

fn run_internal(
    config: &PipelineConfig,
    opts: &RunOptions,
    action: BaselineAction,
) -> Result<RunReport, PipelineError> {
    let fingerprint = config.fingerprint();
    let plan = opts
        .trigger
        .as_ref()
        .map(|event| plan_triggers(event, &config.prompt_graph()));
    let blocking = plan.as_ref().map_or(true, |p| p.blocking);
    let layers = match &plan {
        Some(p) => {
            let mut layers = p.layers.clone();
            layers.sort_unstable();
            layers.dedup();
            layers
        }
        None => config.layers(),
    };
    let on = |layer: u8| layers.contains(&layer);

    if action != BaselineAction::Record && config.baseline_store.is_none() {
        return Err(PipelineError::Config(
            "baseline commands need baseline_store in the config".into(),
        ));
    }

    let mut datasets = Vec::new();
    for path in &config.datasets {
        let mut dataset = load_dataset(path).map_err(|e| PipelineError::Config(e.to_string()))?;
        if let Some(template) = &mut dataset.prompt.template_path {
            if template.is_relative() {
                let base = path.parent().unwrap_or_else(|| std::path::Path::new("."));
                *template = base.join(&*template);
            }
        }
        datasets.push(dataset);
    }
    if let Some(PlanScope::Prompts { prompts }) = plan.as_ref().map(|p| &p.scope) {
        datasets.retain(|d| prompts.contains(&d.prompt.id));
    }
    if let Some(ids) = &opts.dataset_ids {
        for id in ids {
            if !datasets.iter().any(|d| &d.dataset_id == id) {
                return Err(PipelineError::Config(format!(
                    "no dataset with id {id:?} is selected"
                )));
            }
        }
        datasets.retain(|d| ids.contains(&d.dataset_id));
    }

    let rag_fixtures = match (&config.rag_fixture, on(1)) {
        (Some(path), true) => Some(RagSampleFixture::load_file(path)?),
        _ => None,
    };
    let handoffs = match (&config.handoff_scenarios, on(3)) {
        (Some(path), true) => Some(load_handoff_scenarios(path)?),
        _ => None,
    };
    let injections = match (&config.injection_scenarios, on(3)) {
        (Some(path), true) => Some(load_injection_scenarios(path)?),
        _ => None,
    };
    let retentions: Option<Vec<RetentionScenario>> = match (&config.retention_scenarios, on(3)) {
        (Some(path), true) => Some(load_json_array(path)?),
        _ => None,
    };
    let goals = match (&config.goal_tasks, on(4)) {
        (Some(path), true) => Some(load_goal_tasks(path)?),
        _ => None,
    };

    let evaluates_cases = !datasets.is_empty() && (on(0) || on(1) || on(2));
    if !evaluates_cases
        && rag_fixtures.is_none()
        && handoffs.is_none()
        && injections.is_none()
        && retentions.is_none()
        && goals.is_none()
        && datasets.is_empty()
    {
        return Err(PipelineError::Config(
            "nothing to evaluate: no datasets selected and no fixtures enabled".into(),
        ));
    }

    let needs_adapter = evaluates_cases
        || handoffs.as_ref().is_some_and(|s| !s.is_empty())
        || injections.as_ref().is_some_and(|s| !s.is_empty())
        || goals.as_ref().is_some_and(|s| !s.is_empty());
    let adapter = if needs_adapter {
        let spec = config.adapter.as_ref().ok_or_else(|| {
            PipelineError::Config("this run needs an adapter, but none is configured".into())
        })?;
        Some(spec.build(config.seed)?)
    } else {
        None
    };
    let adapter_ref: Option<&dyn SutAdapter> = adapter.as_deref();

    let needs_judge = (on(1) && datasets.iter().any(|d| !d.cases.is_empty()))
        || goals.as_ref().is_some_and(|s| !s.is_empty());
    let judge = if needs_judge {
        let spec = config.judge.as_ref().ok_or_else(|| {
            PipelineError::Config("this run needs a judge, but none is configured".into())
        })?;
        Some(spec.build()?)
    } else {
        None
    };
    let judge_ref: Option<&dyn Judge> = judge.as_deref();

    let rubrics = if on(1) && datasets.iter().any(|d| !d.cases.is_empty()) {
        let path = config.rubrics.as_ref().ok_or_else(|| {
            PipelineError::Config("layer 1 needs a rubric file, but none is configured".into())
        })?;
        load_rubrics(path).map_err(judge_error)?
    } else {
        Vec::new()
    };

    let mut stats = InvocationStats::default();
    let mut dataset_reports = Vec::new();
    for dataset in &datasets {
        let report = evaluate_dataset(
            dataset,
            config,
            opts,
            &fingerprint,
            adapter_ref,
            judge_ref,
            &rubrics,
            &layers,
            &mut stats,
        )?;
        dataset_reports.push(report);
    }

    if stats.total > 0 && stats.errors == stats.total {
        return Err(PipelineError::Infra(format!(
            "every SUT invocation failed; last error: {}",
            stats.last_error.unwrap_or_default()
        )));
    }

    let store = match &config.baseline_store {
        Some(path) => Some(BaselineStore::open(path).map_err(store_error)?),
        None => None,
    };
    if let Some(store) = &store {
        for report in &mut dataset_reports {
            let Some(record) = &report.record else {
                continue;
            };
            match store.active_baseline(&record.dataset_id, &record.model_version) {
                Ok(baseline) => {
                    let comparison =
                        compare_to_baseline(record, &baseline, config.regression_margin)
                            .map_err(store_error)?;
                    if on(4) {
                        let total = comparison.comparisons.len();
                        if total > 0 {
                            let ok = comparison.comparisons.iter().filter(|c| !c.regressed).count();
                            kpi_set_mut(&mut report.layers, 4).insert(
                                "end_to_end_regression_pass_rate",
                                round6(ok as f64 / total as f64),
                            );
                        }
                    }
                    report.regression = Some(comparison);
                }
                Err(RegressionError::NoBaseline { .. }) if action != BaselineAction::Compare => {}
                Err(error) => return Err(store_error(error)),
            }
            store.record_run(record).map_err(store_error)?;
        }
    }

    let rag = match rag_fixtures {
        Some(fixtures) => Some(evaluate_rag(&fixtures, config)?),
        None => None,
    };

    let suites = build_suites(
        config,
        adapter_ref,
        judge_ref,
        handoffs.as_deref(),
        injections.as_deref(),
        retentions.as_deref(),
        goals.as_deref(),
        on(3),
        on(4),
    )?;

    let datasets_ok = dataset_reports.iter().all(|d| d.passed);
    let rag_ok = rag.as_ref().is_none_or(|r| r.deploy_approved);
    let suites_ok = suites.as_ref().is_none_or(|s| s.passed);
    let regression_ok = action != BaselineAction::Compare
        || dataset_reports
            .iter()
            .all(|d| d.regression.as_ref().is_none_or(|r| !r.regressed));
    let gates_passed = datasets_ok && rag_ok && suites_ok && regression_ok;
    let exit_code = if gates_passed || !blocking { 0 } else { 1 };

    if action == BaselineAction::Set && exit_code == 0 {
        let store = store.as_ref().expect("store checked above");
        for report in &dataset_reports {
            if let Some(record) = &report.record {
                store.set_baseline(record).map_err(store_error)?;
            }
        }
    }

    let command = match action {
        BaselineAction::Record => "run",
        BaselineAction::Set => "baseline set",
        BaselineAction::Compare => "baseline compare",
    };
    Ok(RunReport {
        report_version: REPORT_VERSION,
        command: command.into(),
        model_version: config.model_version.clone(),
        config_fingerprint: fingerprint,
        trigger: opts.trigger.clone(),
        plan,
        blocking,
        layers_enabled: layers,
        datasets: dataset_reports,
        rag,
        suites,
        gates_passed,
        exit_code,
    })
}

fn kpi_set_mut(layers: &mut Vec<KpiSet>, layer: u8) -> &mut KpiSet {
    if let Some(index) = layers.iter().position(|set| set.layer == layer) {
        return &mut layers[index];
    }
    layers.push(KpiSet::new(layer));
    layers.last_mut().expect("just pushed")
}

#[allow(clippy::too_many_arguments)]
fn evaluate_dataset(
    dataset: &EvalDataset,
    config: &PipelineConfig,
    opts: &RunOptions,
    fingerprint: &str,
    adapter: Option<&dyn SutAdapter>,
    judge: Option<&dyn Judge>,
    rubric_file: &[Rubric],
    layers: &[u8],
    stats: &mut InvocationStats,
) -> Result<DatasetReport, PipelineError> {
    let on = |layer: u8| layers.contains(&layer);
    let mut report = DatasetReport {
        dataset_id: dataset.dataset_id.clone(),
        prompt_id: dataset.prompt.id.clone(),
        prompt_version: dataset.prompt.version.clone(),
        static_layer0: None,
        short_circuited: false,
        record: None,
        layers: Vec::new(),
        thresholds: None,
        regression: None,
        passed: true,
    };

    if on(0) {
        if let Some(requirements) = dataset
            .layer0
            .as_ref()
            .and_then(|spec| spec.template_requirements.as_ref())
        {
            let template_path = dataset.prompt.template_path.as_ref().ok_or_else(|| {
                PipelineError::Config(format!(
                    "dataset {}: template requirements need prompt.template_path",
                    dataset.dataset_id
                ))
            })?;
            let template = std::fs::read_to_string(template_path).map_err(|e| {
                PipelineError::Config(format!(
                    "cannot read template {}: {e}",
                    template_path.display()
                ))
            })?;
            let result = validate_prompt_template(&template, requirements);
            let pass = result.pass;
            report.static_layer0 = Some(result);
            kpi_set_mut(&mut report.layers, 0)
                .insert("prompt_structure_compliance", if pass { 1.0 } else { 0.0 });
            if !pass {
                report.passed = false;
                if !opts.continue_on_layer_failure {
                    report.short_circuited = true;
                    return Ok(report);
                }
            }
        }
    }

    if dataset.cases.is_empty() || !(on(0) || on(1) || on(2)) {
        return Ok(report);
    }
    let adapter = adapter.expect("adapter presence checked by the caller");

    let mut sorted: Vec<&GoldenCase> = dataset.cases.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));

    let rubric_sets = if on(1) {
        Some(resolve_rubrics(&sorted, rubric_file, &config.gates)?)
    } else {
        None
    };

    let context = CaseContext {
        dataset,
        adapter,
        judge,
        policy: &config.gates,
        layer0: on(0),
        layer1: on(1),
        layer2: on(2),
    };
    let cases = run_case_pool(&sorted, rubric_sets.as_deref(), &context, config.workers)?;

    for case in &cases {
        stats.total += 1;
        if let Some(error) = &case.error {
            stats.errors += 1;
            stats.last_error = Some(error.message.clone());
        }
    }

    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for case in &cases {
        for (dimension, score) in &case.scores.0 {
            let entry = sums.entry(dimension.clone()).or_insert((0.0, 0));
            entry.0 += score;
            entry.1 += 1;
        }
    }
    let aggregates: BTreeMap<String, f64> = sums
        .into_iter()
        .map(|(dimension, (sum, count))| (dimension, round6(sum / count as f64)))
        .collect();

    let mut record = RunRecord {
        run_id: derive_run_id(fingerprint, &dataset.dataset_id, opts.now),
        timestamp: opts.now,
        dataset_id: dataset.dataset_id.clone(),
        prompt_version: dataset.prompt.version.clone(),
        model_version: config.model_version.clone(),
        config_fingerprint: fingerprint.to_string(),
        cases,
        aggregates,
        kpis: BTreeMap::new(),
    };

    if on(1) && !dataset.thresholds.is_empty() {
        let outcome = apply_thresholds(&record.aggregates, &dataset.thresholds)
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if !outcome.pass {
            report.passed = false;
        }
        report.thresholds = Some(outcome);
    }
    if record
        .cases
        .iter()
        .any(|case| case.gate.as_ref().is_some_and(|gate| !gate.mandatory_pass))
    {
        report.passed = false;
    }
    // A failed check at any enabled layer fails the dataset, even when the
    // layer that would gate it (for example layer 1) is switched off.
    if record.cases.iter().any(|case| {
        case.structure.as_ref().is_some_and(|v| !v.pass)
            || case.schema.as_ref().is_some_and(|v| !v.pass)
            || case.trajectory.as_ref().is_some_and(|t| !t.pass)
    }) {
        report.passed = false;
    }

    dataset_kpis(&record, dataset, layers, &mut report.layers);
    record.kpis = report
        .layers
        .iter()
        .flat_map(|set| set.values.iter().map(|(k, v)| (k.clone(), *v)))
        .collect();
    report.record = Some(record);
    Ok(report)
}

/// Resolves each case's rubric list and checks it covers every gate
/// dimension, so missing dimensions surface before any SUT call.
fn resolve_rubrics(
    cases: &[&GoldenCase],
    rubric_file: &[Rubric],
    policy: &GatePolicy,
) -> Result<Vec<Vec<Rubric>>, PipelineError> {
    let by_id: BTreeMap<&str, &Rubric> = rubric_file
        .iter()
        .map(|rubric| (rubric.rubric_id.as_str(), rubric))
        .collect();
    let mut out = Vec::with_capacity(cases.len());
    for case in cases {
        let resolved: Vec<Rubric> = match &case.rubrics {
            Some(ids) => {
                let mut list = Vec::with_capacity(ids.len());
                for id in ids {
                    let rubric = by_id.get(id.as_str()).ok_or_else(|| {
                        PipelineError::Config(format!(
                            "case {}: rubric {id:?} is not in the rubric file",
                            case.id
                        ))
                    })?;
                    list.push((*rubric).clone());
                }
                list
            }
            None => rubric_file.to_vec(),
        };
        for dimension in policy.dimensions() {
            if !resolved.iter().any(|rubric| rubric.dimension == dimension) {
                return Err(PipelineError::Config(format!(
                    "case {}: no rubric scores gate dimension {dimension:?}",
                    case.id
                )));
            }
        }
        out.push(resolved);
    }
    Ok(out)
}

fn run_case_pool(
    cases: &[&GoldenCase],
    rubric_sets: Option<&[Vec<Rubric>]>,
    context: &CaseContext<'_>,
    workers: usize,
) -> Result<Vec<CaseResult>, PipelineError> {
    let n = cases.len();
    let slots: Mutex<Vec<Option<Result<CaseResult, PipelineError>>>> =
        Mutex::new((0..n).map(|_| None).collect());
    let chunk_size = n.div_ceil(workers.max(1)).max(1);
    let indices: Vec<usize> = (0..n).collect();
    let slots_ref = &slots;
    std::thread::scope(|scope| {
        for chunk in indices.chunks(chunk_size) {
            scope.spawn(move || {
                for &i in chunk {
                    let rubrics = rubric_sets.map(|sets| sets[i].as_slice());
                    let result = evaluate_case(cases[i], rubrics, context);
                    slots_ref.lock().expect("case slot lock")[i] = Some(result);
                }
            });
        }
    });
    let slots = slots.into_inner().expect("case slot lock");
    let mut out = Vec::with_capacity(n);
    for slot in slots {
        out.push(slot.expect("worker filled every slot")?);
    }
    Ok(out)
}

fn evaluate_case(
    case: &GoldenCase,
    rubrics: Option<&[Rubric]>,
    context: &CaseContext<'_>,
) -> Result<CaseResult, PipelineError> {
    let response = context.adapter.invoke(&SutRequest::new(case.input.clone()));
    let mut result = CaseResult {
        case_id: case.id.clone(),
        output: response.output.clone(),
        error: response.error.as_ref().map(|e| CaseError {
            kind: e.kind.clone(),
            message: e.message.clone(),
        }),
        scores: DimensionScores::new(),
        gate: None,
        structure: None,
        schema: None,
        trajectory: None,
    };

    if context.layer0 {
        let text = response.output_text().unwrap_or_default();
        if let Some(spec) = case.reference_output.as_ref().and_then(StructSpec::from_reference) {
            result.structure = Some(validate_structure(&text, &spec));
        }
        if let Some(schema) = context
            .dataset
            .layer0
            .as_ref()
            .and_then(|layer0| layer0.schema.as_ref())
        {
            result.schema = Some(validate_schema(&text, schema));
        }
    }

    if context.layer1 {
        if response.is_error() {
            for dimension in context.policy.dimensions() {
                result.scores.insert(dimension, 0.0);
            }
        } else {
            let judge = context.judge.ok_or_else(|| {
                PipelineError::Config("layer 1 needs a judge, but none is configured".into())
            })?;
            let rubrics = rubrics.expect("rubrics resolved when layer 1 is enabled");
            let reference = case.reference_output.as_ref().map(canonical_text);
            let output_text = response.output_text().unwrap_or_default();
            result.scores = score_dimensions(
                judge,
                &case.input,
                &output_text,
                reference.as_deref(),
                rubrics,
            )
            .map_err(judge_error)?;
        }
        let gate = evaluate_gates(&result.scores, context.policy)
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        result.gate = Some(gate);
    }

    if context.layer2 {
        if let Some(expectation) = &case.trajectory {
            result.trajectory = Some(evaluate_case_trajectory(expectation, &response));
        }
    }

    Ok(result)
}

fn divergence_message(reference: &ReferenceTrajectory, matched: &TrajectoryMatch) -> String {
    match matched.first_divergence {
        Some(i) if i < reference.tools.len() => {
            format!("tool sequence diverged at step {i}: expected {:?}", reference.tools[i])
        }
        Some(i) => format!("unexpected extra tool calls from position {i}"),
        None => "tool sequence diverged".into(),
    }
}

fn evaluate_case_trajectory(
    expectation: &TrajectoryExpectation,
    response: &SutResponse,
) -> CaseTrajectoryResult {
    let Some(steps) = &response.transcript else {
        return CaseTrajectoryResult {
            pass: false,
            violations: vec!["SUT returned no transcript".into()],
            first_divergence: None,
            tool_call_accuracy: None,
            unnecessary_call_rate: None,
        };
    };
    let trajectory = Trajectory::new(steps.clone());
    match expectation {
        TrajectoryExpectation::Reference(reference) => {
            let matched =
                match_reference_trajectory(&trajectory, &reference.tools, reference.ordering);
            let expected_calls: Vec<ExpectedCall> = if reference.calls.is_empty() {
                reference
                    .tools
                    .iter()
                    .map(|tool| ExpectedCall {
                        tool_name: tool.clone(),
                        params: ParamsMatcher::any(),
                    })
                    .collect()
            } else {
                reference.calls.clone()
            };
            let accuracy = score_tool_calls(&trajectory.tool_calls(), &expected_calls);
            let params_ok = reference.calls.is_empty() || accuracy.combined_accuracy == 1.0;
            let mut violations = Vec::new();
            if !matched.matched {
                violations.push(divergence_message(reference, &matched));
            }
            if !params_ok {
                violations.push("tool parameters diverged from the expected calls".into());
            }
            CaseTrajectoryResult {
                pass: matched.matched && params_ok,
                violations,
                first_divergence: matched.first_divergence,
                tool_call_accuracy: Some(round6(accuracy.combined_accuracy)),
                unnecessary_call_rate: Some(round6(accuracy.unnecessary_call_rate)),
            }
        }
        TrajectoryExpectation::Rubric(rubric) => {
            let outcome = evaluate_trajectory_rubric(&trajectory, rubric);
            CaseTrajectoryResult {
                pass: outcome.pass,
                violations: outcome.violations,
                first_divergence: None,
                tool_call_accuracy: None,
                unnecessary_call_rate: None,
            }
        }
    }
}

fn dataset_kpis(
    record: &RunRecord,
    dataset: &EvalDataset,
    layers: &[u8],
    out: &mut Vec<KpiSet>,
) {
    let on = |layer: u8| layers.contains(&layer);
    let n = record.cases.len();
    if n == 0 {
        return;
    }
    let scenario_of: BTreeMap<&str, ScenarioKind> = dataset
        .cases
        .iter()
        .map(|case| (case.id.as_str(), case.scenario))
        .collect();

    if on(0) {
        let set = kpi_set_mut(out, 0);
        let errors = record.cases.iter().filter(|c| c.error.is_some()).count();
        set.insert("tool_reliability_rate", round6(1.0 - errors as f64 / n as f64));
        let checked: Vec<&CaseResult> = record
            .cases
            .iter()
            .filter(|c| c.structure.is_some() || c.schema.is_some())
            .collect();
        if !checked.is_empty() {
            let ok = checked
                .iter()
                .filter(|c| {
                    c.structure.as_ref().is_none_or(|v| v.pass)
                        && c.schema.as_ref().is_none_or(|v| v.pass)
                })
                .count();
            set.insert(
                "schema_adherence_rate",
                round6(ok as f64 / checked.len() as f64),
            );
        }
    }

    if on(1) {
        let gated: Vec<&CaseResult> = record.cases.iter().filter(|c| c.gate.is_some()).collect();
        if !gated.is_empty() {
            let set = kpi_set_mut(out, 1);
            let passes = gated
                .iter()
                .filter(|c| c.gate.as_ref().is_some_and(|g| g.final_pass))
                .count();
            set.insert("prompt_pass_rate", round6(passes as f64 / gated.len() as f64));

            let adversarial: Vec<&&CaseResult> = gated
                .iter()
                .filter(|c| {
                    scenario_of
                        .get(c.case_id.as_str())
                        .is_some_and(|s| s.is_adversarial())
                })
                .collect();
            if !adversarial.is_empty() {
                let blocked = adversarial
                    .iter()
                    .filter(|c| c.scores.get(DIM_SAFETY_COMPLIANCE) == Some(1.0))
                    .count();
                set.insert(
                    "guardrail_trigger_rate",
                    round6(blocked as f64 / adversarial.len() as f64),
                );
            }

            let previously_failing: Vec<&&CaseResult> = gated
                .iter()
                .filter(|c| {
                    scenario_of.get(c.case_id.as_str()) == Some(&ScenarioKind::PreviouslyFailing)
                })
                .collect();
            if !previously_failing.is_empty() {
                let failing_again = previously_failing
                    .iter()
                    .filter(|c| c.gate.as_ref().is_some_and(|g| !g.final_pass))
                    .count();
                set.insert(
                    "prompt_regression_rate",
                    round6(failing_again as f64 / previously_failing.len() as f64),
                );
            }
        }
    }

    if on(2) {
        let evaluated: Vec<&CaseTrajectoryResult> = record
            .cases
            .iter()
            .filter_map(|c| c.trajectory.as_ref())
            .collect();
        if !evaluated.is_empty() {
            let set = kpi_set_mut(out, 2);
            let passes = evaluated.iter().filter(|t| t.pass).count();
            set.insert(
                "trajectory_correctness_rate",
                round6(passes as f64 / evaluated.len() as f64),
            );
            let accuracies: Vec<f64> = evaluated
                .iter()
                .filter_map(|t| t.tool_call_accuracy)
                .collect();
            if !accuracies.is_empty() {
                set.insert(
                    "tool_call_accuracy",
                    round6(accuracies.iter().sum::<f64>() / accuracies.len() as f64),
                );
            }
            let waste: Vec<f64> = evaluated
                .iter()
                .filter_map(|t| t.unnecessary_call_rate)
                .collect();
            if !waste.is_empty() {
                set.insert(
                    "unnecessary_call_rate",
                    round6(waste.iter().sum::<f64>() / waste.len() as f64),
                );
            }
        }
    }

    if on(4) {
        if let Some(factual) = record.aggregates.get(DIM_FACTUAL_CORRECTNESS) {
            kpi_set_mut(out, 4).insert("factual_accuracy_score", *factual);
        }
    }
}

fn evaluate_rag(
    fixtures: &[RagSampleFixture],
    config: &PipelineConfig,
) -> Result<RagReport, PipelineError> {
    let mut samples = Vec::with_capacity(fixtures.len());
    let mut precisions = Vec::new();
    let mut recalls = Vec::new();
    for (index, fixture) in fixtures.iter().enumerate() {
        let sample_id = fixture
            .sample_id
            .clone()
            .unwrap_or_else(|| format!("sample-{}", index + 1));
        let sample = fixture.sample();
        let mut chunk_index = 0usize;
        let relevant = |_chunk: &str, _query: &str| {
            let i = chunk_index;
            chunk_index += 1;
            fixture
                .relevant_chunks
                .as_ref()
                .is_none_or(|set| set.contains(&i))
        };
        let relevancy = match fixture.relevancy {
            Some(value) => Some(
                answer_relevancy(&sample, |_, _| Ok(value))
                    .map_err(|e| PipelineError::Config(format!("rag sample {sample_id}: {e}")))?,
            ),
            None => None,
        };
        let profile = RagProfile {
            context_precision: context_precision(&sample, relevant).map(round6),
            context_recall: context_recall(&sample, |claim, retrieved| {
                substring_support(claim, retrieved)
            })
            .map(round6),
            faithfulness: faithfulness(&sample, |claim, retrieved| {
                substring_support(claim, retrieved)
            })
            .map(round6),
            answer_relevancy: relevancy.map(round6),
        };
        let gates = apply_rag_gates(&profile, &config.rag_gates)
            .map_err(|e| PipelineError::Config(format!("rag sample {sample_id}: {e}")))?;
        let diagnosis = diagnose_rag(&profile, &config.rag_gates)
            .map_err(|e| PipelineError::Config(format!("rag sample {sample_id}: {e}")))?;
        if let Some(p) = profile.context_precision {
            precisions.push(p);
        }
        if let Some(r) = profile.context_recall {
            recalls.push(r);
        }
        samples.push(RagSampleReport {
            sample_id,
            profile,
            gates,
            diagnosis,
            diagnosis_description: diagnosis.description().into(),
        });
    }
    let deploy_approved = samples.iter().all(|s| s.gates.deploy_approved);
    let mut kpis = KpiSet::new(1);
    if !precisions.is_empty() {
        kpis.insert(
            "context_precision",
            round6(precisions.iter().sum::<f64>() / precisions.len() as f64),
        );
    }
    if !recalls.is_empty() {
        kpis.insert(
            "context_recall",
            round6(recalls.iter().sum::<f64>() / recalls.len() as f64),
        );
    }
    Ok(RagReport {
        samples,
        kpis: (!kpis.is_empty()).then_some(kpis),
        deploy_approved,
    })
}

#[allow(clippy::too_many_arguments)]
fn build_suites(
    config: &PipelineConfig,
    adapter: Option<&dyn SutAdapter>,
    judge: Option<&dyn Judge>,
    handoffs: Option<&[crate::agent::HandoffScenario]>,
    injections: Option<&[crate::agent::InjectionScenario]>,
    retentions: Option<&[RetentionScenario]>,
    goals: Option<&[crate::agent::GoalTask]>,
    layer3: bool,
    layer4: bool,
) -> Result<Option<SuiteReport>, PipelineError> {
    let mut suite = SuiteReport {
        handoff: Vec::new(),
        injection: Vec::new(),
        retention: Vec::new(),
        goals: Vec::new(),
        layers: Vec::new(),
        passed: true,
    };
    let mut any = false;
    let mut kpi3 = KpiSet::new(3);
    let mut kpi4 = KpiSet::new(4);

    if layer3 {
        if let Some(scenarios) = handoffs {
            any = true;
            let adapter = adapter.ok_or_else(|| {
                PipelineError::Config("handoff scenarios need an adapter".into())
            })?;
            for scenario in scenarios {
                suite
                    .handoff
                    .push(run_handoff_scenario_repeated(scenario, adapter, config.handoff_pairs));
            }
            let verdicts: Vec<bool> = suite
                .handoff
                .iter()
                .filter_map(|outcome| outcome.handoff_pass())
                .collect();
            if !verdicts.is_empty() {
                let passes = verdicts.iter().filter(|pass| **pass).count();
                kpi3.insert(
                    "agent_handoff_accuracy",
                    round6(passes as f64 / verdicts.len() as f64),
                );
                if passes < verdicts.len() {
                    suite.passed = false;
                }
            }
        }
        if let Some(scenarios) = injections {
            any = true;
            let adapter = adapter.ok_or_else(|| {
                PipelineError::Config("injection scenarios need an adapter".into())
            })?;
            for scenario in scenarios {
                let outcome = run_failure_injection(scenario, adapter);
                if !outcome.pass {
                    suite.passed = false;
                }
                suite.injection.push(outcome);
            }
            if !suite.injection.is_empty() {
                let passes = suite.injection.iter().filter(|o| o.pass).count();
                kpi3.insert(
                    "recovery_success_rate",
                    round6(passes as f64 / suite.injection.len() as f64),
                );
            }
        }
        if let Some(scenarios) = retentions {
            any = true;
            for scenario in scenarios {
                let outcome = evaluate_state_retention(&scenario.transcript, &scenario.checks)
                    .map_err(|e| {
                        PipelineError::Config(format!(
                            "retention scenario {}: {e}",
                            scenario.scenario_id
                        ))
                    })?;
                if !outcome.pass {
                    suite.passed = false;
                }
                suite.retention.push(RetentionSuiteOutcome {
                    scenario_id: scenario.scenario_id.clone(),
                    outcome,
                });
            }
            if !suite.retention.is_empty() {
                let passes = suite.retention.iter().filter(|o| o.outcome.pass).count();
                kpi3.insert(
                    "state_retention_across_agents",
                    round6(passes as f64 / suite.retention.len() as f64),
                );
            }
        }
    }

    if layer4 {
        if let Some(tasks) = goals {
            any = true;
            let adapter = adapter
                .ok_or_else(|| PipelineError::Config("goal tasks need an adapter".into()))?;
            let judge =
                judge.ok_or_else(|| PipelineError::Config("goal tasks need a judge".into()))?;
            let mut efficiencies = Vec::new();
            for task in tasks {
                let response = adapter.invoke(&SutRequest::new(task.input.clone()));
                let transcript_text = response
                    .transcript
                    .as_ref()
                    .map(|steps| Trajectory::new(steps.clone()).render())
                    .or_else(|| response.output_text())
                    .unwrap_or_default();
                let outcome = evaluate_goal_completion(task, &transcript_text, judge)
                    .map_err(judge_error)?;
                if !outcome.pass {
                    suite.passed = false;
                }
                if let (Some(optimal), Some(steps)) = (task.optimal_steps, &response.transcript) {
                    if !steps.is_empty() {
                        efficiencies.push((optimal as f64 / steps.len() as f64).min(1.0));
                    }
                }
                suite.goals.push(outcome);
            }
            if !suite.goals.is_empty() {
                let passes = suite.goals.iter().filter(|o| o.pass).count();
                kpi4.insert(
                    "agent_goal_completion_rate",
                    round6(passes as f64 / suite.goals.len() as f64),
                );
            }
            if layer3 && !efficiencies.is_empty() {
                kpi3.insert(
                    "trajectory_efficiency_score",
                    round6(efficiencies.iter().sum::<f64>() / efficiencies.len() as f64),
                );
            }
        }
    }

    if !any {
        return Ok(None);
    }
    if !kpi3.is_empty() {
        suite.layers.push(kpi3);
    }
    if !kpi4.is_empty() {
        suite.layers.push(kpi4);
    }
    Ok(Some(suite))
}

/// One case's repeated-run analysis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseConsistency {
    pub dataset_id: String,
    pub case_id: String,
    pub report: ConsistencyReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsistencyRunReport {
    pub report_version: u32,
    pub command: String,
    pub config_fingerprint: String,
    pub n: usize,
    pub cases: Vec<CaseConsistency>,
    pub all_consistent: bool,
    pub exit_code: u8,
}

/// Runs each selected case `n` times and classifies its pass rate. A case
/// run passes when the judged gate passes (or, without a judge, when the
/// output equals the reference exactly).
pub fn cmd_consistency(
    config: &PipelineConfig,
    case_ids: Option<&[String]>,
    n: usize,
) -> Result<ConsistencyRunReport, PipelineError> {
    if n == 0 {
        return Err(PipelineError::Config(
            "consistency needs at least one run per case".into(),
        ));
    }
    let fingerprint = config.fingerprint();
    let mut datasets = Vec::new();
    for path in &config.datasets {
        datasets.push(load_dataset(path).map_err(|e| PipelineError::Config(e.to_string()))?);
    }
    if datasets.is_empty() {
        return Err(PipelineError::Config("no datasets configured".into()));
    }
    let spec = config
        .adapter
        .as_ref()
        .ok_or_else(|| PipelineError::Config("consistency needs an adapter".into()))?;
    let adapter = spec.build(config.seed)?;
    let judge = match &config.judge {
        Some(spec) => Some(spec.build()?),
        None => None,
    };
    let rubrics = match (&config.rubrics, &judge) {
        (Some(path), Some(_)) => load_rubrics(path).map_err(judge_error)?,
        _ => Vec::new(),
    };

    let mut selected: Vec<(&EvalDataset, &GoldenCase)> = Vec::new();
    for dataset in &datasets {
        let mut cases: Vec<&GoldenCase> = dataset.cases.iter().collect();
        cases.sort_by(|a, b| a.id.cmp(&b.id));
        for case in cases {
            if case_ids.is_none_or(|ids| ids.iter().any(|id| id == &case.id)) {
                selected.push((dataset, case));
            }
        }
    }
    if let Some(ids) = case_ids {
        for id in ids {
            if !selected.iter().any(|(_, case)| &case.id == id) {
                return Err(PipelineError::Config(format!("no case with id {id:?}")));
            }
        }
    }
    if selected.is_empty() {
        return Err(PipelineError::Config("no cases selected".into()));
    }

    let mut case_reports = Vec::with_capacity(selected.len());
    for (dataset, case) in selected {
        let request = SutRequest::new(case.input.clone());
        let responses = adapter.invoke_repeated(&request, n);
        let mut scores = Vec::with_capacity(n);
        for response in &responses {
            scores.push(score_consistency_run(
                case,
                response,
                judge.as_deref(),
                &rubrics,
                &config.gates,
            )?);
        }
        let mut report = ConsistencyReport::from_scores(scores, config.per_run_pass_threshold)
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        report.pass_rate = round6(report.pass_rate);
        case_reports.push(CaseConsistency {
            dataset_id: dataset.dataset_id.clone(),
            case_id: case.id.clone(),
            report,
        });
    }
    let all_consistent = case_reports
        .iter()
        .all(|c| c.report.verdict == ConsistencyVerdict::ConsistentPass);
    Ok(ConsistencyRunReport {
        report_version: REPORT_VERSION,
        command: "consistency".into(),
        config_fingerprint: fingerprint,
        n,
        cases: case_reports,
        all_consistent,
        exit_code: if all_consistent { 0 } else { 1 },
    })
}

fn score_consistency_run(
    case: &GoldenCase,
    response: &SutResponse,
    judge: Option<&dyn Judge>,
    rubrics: &[Rubric],
    policy: &GatePolicy,
) -> Result<f64, PipelineError> {
    if response.is_error() {
        return Ok(0.0);
    }
    if let Some(judge) = judge {
        let reference = case.reference_output.as_ref().map(canonical_text);
        let output_text = response.output_text().unwrap_or_default();
        let scores = score_dimensions(
            judge,
            &case.input,
            &output_text,
            reference.as_deref(),
            rubrics,
        )
        .map_err(judge_error)?;
        let gate =
            evaluate_gates(&scores, policy).map_err(|e| PipelineError::Config(e.to_string()))?;
        return Ok(if gate.final_pass { 1.0 } else { 0.0 });
    }
    match &case.reference_output {
        Some(reference) => Ok(if response.output.as_ref() == Some(reference) {
            1.0
        } else {
            0.0
        }),
        None => Err(PipelineError::Config(format!(
            "case {}: consistency scoring needs a judge or a reference output",
            case.id
        ))),
    }
}

/// Offline score file accepted by the gate command: judged dimension scores,
/// a RAG metric profile, or both.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateScoresFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimensions: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rag: Option<RagProfile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GateCommandReport {
    pub report_version: u32,
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimensions: Option<GateResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rag_profile: Option<RagProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rag_gates: Option<RagGateOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rag_diagnosis: Option<RagDiagnosis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rag_diagnosis_description: Option<String>,
    pub passed: bool,
    pub exit_code: u8,
}

/// Applies the configured gate policies to a file of scores, with no SUT in
/// the loop. Works without a config file by falling back to the default
/// policies.
pub fn cmd_gate(
    config: Option<&PipelineConfig>,
    scores_path: &Path,
) -> Result<GateCommandReport, PipelineError> {
    let text = std::fs::read_to_string(scores_path).map_err(|e| {
        PipelineError::Config(format!("cannot read {}: {e}", scores_path.display()))
    })?;
    let file: GateScoresFile = serde_json::from_str(&text).map_err(|e| {
        PipelineError::Config(format!("cannot parse {}: {e}", scores_path.display()))
    })?;
    if file.dimensions.is_none() && file.rag.is_none() {
        return Err(PipelineError::Config(
            "scores file needs a \"dimensions\" or \"rag\" section".into(),
        ));
    }
    let policy = config.map(|c| c.gates.clone()).unwrap_or_default();
    let rag_gates = config.map(|c| c.rag_gates).unwrap_or_default();

    let mut passed = true;
    let dimensions = match file.dimensions {
        Some(map) => {
            let scores = DimensionScores(map);
            let violations = scores.validate();
            if !violations.is_empty() {
                return Err(PipelineError::Config(format!(
                    "bad dimension scores: {}",
                    violations
                        .iter()
                        .map(|v| v.to_string())
                        .collect::<Vec<_>>()
                        .join("; ")
                )));
            }
            let gate = evaluate_gates(&scores, &policy)
                .map_err(|e| PipelineError::Config(e.to_string()))?;
            passed &= gate.final_pass;
            Some(gate)
        }
        None => None,
    };
    let (rag_profile, rag_outcome, rag_diagnosis) = match file.rag {
        Some(profile) => {
            let outcome = apply_rag_gates(&profile, &rag_gates)
                .map_err(|e| PipelineError::Config(e.to_string()))?;
            let diagnosis = diagnose_rag(&profile, &rag_gates)
                .map_err(|e| PipelineError::Config(e.to_string()))?;
            passed &= outcome.deploy_approved;
            (Some(profile), Some(outcome), Some(diagnosis))
        }
        None => (None, None, None),
    };
    Ok(GateCommandReport {
        report_version: REPORT_VERSION,
        command: "gate".into(),
        dimensions,
        rag_profile,
        rag_gates: rag_outcome,
        rag_diagnosis,
        rag_diagnosis_description: rag_diagnosis.map(|d| d.description().into()),
        passed,
        exit_code: if passed { 0 } else { 1 },
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftRow {
    pub dataset_id: String,
    pub kpi: String,
    pub outcome: DriftOutcome,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DriftReport {
    pub report_version: u32,
    pub command: String,
    pub rows: Vec<DriftRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    pub flagged: bool,
    pub exit_code: u8,
}

/// Checks the recorded KPI trends for gradual decline. Missing or short
/// history is a note, not a failure.
pub fn cmd_drift(
    config: &PipelineConfig,
    dataset_ids: Option<&[String]>,
) -> Result<DriftReport, PipelineError> {
    let store_path = config.baseline_store.as_ref().ok_or_else(|| {
        PipelineError::Config("drift needs baseline_store in the config".into())
    })?;
    let store = BaselineStore::open(store_path).map_err(store_error)?;
    let mut ids = Vec::new();
    for path in &config.datasets {
        let dataset = load_dataset(path).map_err(|e| PipelineError::Config(e.to_string()))?;
        ids.push(dataset.dataset_id);
    }
    if let Some(filter) = dataset_ids {
        for id in filter {
            if !ids.contains(id) {
                return Err(PipelineError::Config(format!("no dataset with id {id:?}")));
            }
        }
        ids.retain(|id| filter.contains(id));
    }
    if ids.is_empty() {
        return Err(PipelineError::Config("no datasets configured".into()));
    }

    let mut rows = Vec::new();
    let mut notes = Vec::new();
    let mut flagged = false;
    for dataset_id in &ids {
        let kpis = match &config.drift.kpi {
            Some(kpi) => vec![kpi.clone()],
            None => store.kpis(dataset_id).map_err(store_error)?,
        };
        if kpis.is_empty() {
            notes.push(format!("insufficient_data: no trend history for {dataset_id}"));
            continue;
        }
        for kpi in kpis {
            let series = store.trend(dataset_id, &kpi).map_err(store_error)?;
            let outcome = detect_drift(
                &series,
                config.drift.window_days,
                config.drift.threshold,
                config.drift.mode,
            );
            match &outcome {
                DriftOutcome::Evaluated { flagged: f, .. } => flagged |= f,
                DriftOutcome::InsufficientData { reason } => {
                    notes.push(format!("insufficient_data: {dataset_id}/{kpi}: {reason}"));
                }
            }
            rows.push(DriftRow {
                dataset_id: dataset_id.clone(),
                kpi,
                outcome,
            });
        }
    }
    Ok(DriftReport {
        report_version: REPORT_VERSION,
        command: "drift".into(),
        rows,
        notes,
        flagged,
        exit_code: if flagged { 1 } else { 0 },
    })
}
