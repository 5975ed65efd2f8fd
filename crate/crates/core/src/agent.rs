//! Agent trajectory and multi-agent scenario evaluation.
//!
//! Layer 2 scores what a single agent *did*: which tools it called, with
//! which parameters, in which order, against either a reference trajectory
//! or a behavioural rubric (mandatory steps, prohibited patterns, a step
//! budget). Layer 3 scores coordination: state retention across turns,
//! handoff quality between agents, and recovery from injected tool failures.
//! Layer 4 judges whether the end goal was met at all.
//!
//! Trajectories arrive as the `transcript` of a SUT response: an ordered list
//! of steps, each a tool call, a reasoning turn, or a handoff.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::judge::{Judge, JudgeError, Rubric};
use crate::sut::{SutAdapter, SutRequest, SutResponse, Turn};

/// Fraction of paired runs in which a handoff differential must hold for the
/// scenario to count as valid under a probabilistic SUT.
pub const HANDOFF_DIFFERENTIAL_MIN_RATE: f64 = 0.9;

/// Default cap on repeated post-failure calls to the same tool before the
/// behaviour is flagged as a loop.
pub const DEFAULT_LOOP_THRESHOLD: usize = 10;

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
}

/// One tool invocation extracted from a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCall {
    pub step_index: usize,
    pub tool_name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub parameters: BTreeMap<String, Value>,
}

/// One step of an agent trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajectoryStep {
    ToolCall {
        tool: String,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        parameters: BTreeMap<String, Value>,
    },
    Reasoning {
        text: String,
    },
    Handoff {
        to: String,
        brief: String,
    },
}

/// Ordered steps an agent took for one task.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn new(steps: Vec<TrajectoryStep>) -> Self {
        Self { steps }
    }

    /// Tool calls in order, with their positions in the full step list.
    pub fn tool_calls(&self) -> Vec<ToolCall> {
        self.steps
            .iter()
            .enumerate()
            .filter_map(|(step_index, step)| match step {
                TrajectoryStep::ToolCall { tool, parameters } => Some(ToolCall {
                    step_index,
                    tool_name: tool.clone(),
                    parameters: parameters.clone(),
                }),
                _ => None,
            })
            .collect()
    }

    pub fn tool_names(&self) -> Vec<String> {
        self.tool_calls()
            .into_iter()
            .map(|call| call.tool_name)
            .collect()
    }

    /// Plain-text rendering used when a judge scores the whole trajectory.
    pub fn render(&self) -> String {
        let mut lines = Vec::with_capacity(self.steps.len());
        for step in &self.steps {
            match step {
                TrajectoryStep::ToolCall { tool, parameters } => {
                    if parameters.is_empty() {
                        lines.push(format!("tool_call {tool}"));
                    } else {
                        let params = serde_json::to_string(parameters).unwrap_or_default();
                        lines.push(format!("tool_call {tool} {params}"));
                    }
                }
                TrajectoryStep::Reasoning { text } => lines.push(text.clone()),
                TrajectoryStep::Handoff { to, brief } => {
                    lines.push(format!("handoff to {to}: {brief}"))
                }
            }
        }
        lines.join("\n")
    }
}

/// Predicate on one expected parameter field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldMatcher {
    /// Exact JSON equality.
    Equals(Value),
    /// Numeric value within `tol` of `value`.
    Within { value: f64, tol: f64 },
    /// Membership in a fixed set.
    OneOf(Vec<Value>),
}

impl FieldMatcher {
    fn matches(&self, actual: &Value) -> bool {
        match self {
            FieldMatcher::Equals(expected) => actual == expected,
            FieldMatcher::Within { value, tol } => actual
                .as_f64()
                .is_some_and(|a| (a - value).abs() <= *tol),
            FieldMatcher::OneOf(allowed) => allowed.contains(actual),
        }
    }
}

/// How an expected call's parameters are checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamsMatcher {
    /// The whole parameter map must be exactly equal.
    Exact(BTreeMap<String, Value>),
    /// Named fields must be present and match; other fields are ignored.
    Fields(BTreeMap<String, FieldMatcher>),
}

impl ParamsMatcher {
    fn matches(&self, actual: &BTreeMap<String, Value>) -> bool {
        match self {
            ParamsMatcher::Exact(expected) => actual == expected,
            ParamsMatcher::Fields(fields) => fields.iter().all(|(name, matcher)| {
                actual.get(name).is_some_and(|value| matcher.matches(value))
            }),
        }
    }
}

/// One expected tool call, aligned positionally with the actual calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpectedCall {
    pub tool_name: String,
    #[serde(default = "ParamsMatcher::any")]
    pub params: ParamsMatcher,
}

impl ParamsMatcher {
    /// Matches anything: an empty field list.
    pub fn any() -> Self {
        ParamsMatcher::Fields(BTreeMap::new())
    }
}

/// Tool-call accuracy over one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallReport {
    /// Fraction of expected positions whose tool name matched.
    pub selection_accuracy: f64,
    /// Fraction of matched selections whose parameters also matched.
    /// Vacuously 1 when no selection matched.
    pub parameter_accuracy: f64,
    /// Fraction of expected positions with both tool and parameters correct.
    pub combined_accuracy: f64,
    /// Fraction of actual calls beyond the expected count.
    pub unnecessary_call_rate: f64,
    pub expected_count: usize,
    pub actual_count: usize,
}

/// Scores actual tool calls against expected calls by position.
pub fn score_tool_calls(actual: &[ToolCall], expected: &[ExpectedCall]) -> ToolCallReport {
    let pairs = actual.len().min(expected.len());
    let mut selected = 0usize;
    let mut both_correct = 0usize;
    for i in 0..pairs {
        if actual[i].tool_name == expected[i].tool_name {
            selected += 1;
            if expected[i].params.matches(&actual[i].parameters) {
                both_correct += 1;
            }
        }
    }
    let selection_accuracy = if expected.is_empty() {
        1.0
    } else {
        selected as f64 / expected.len() as f64
    };
    let parameter_accuracy = if selected == 0 {
        1.0
    } else {
        both_correct as f64 / selected as f64
    };
    let combined_accuracy = if expected.is_empty() {
        1.0
    } else {
        both_correct as f64 / expected.len() as f64
    };
    let extra = actual.len().saturating_sub(expected.len());
    let unnecessary_call_rate = if actual.is_empty() {
        0.0
    } else {
        extra as f64 / actual.len() as f64
    };
    ToolCallReport {
        selection_accuracy,
        parameter_accuracy,
        combined_accuracy,
        unnecessary_call_rate,
        expected_count: expected.len(),
        actual_count: actual.len(),
    }
}

/// Whether a reference trajectory must match exactly or as a subsequence.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchOrdering {
    #[default]
    Strict,
    Subsequence,
}

/// Outcome of matching a trajectory against a reference tool sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMatch {
    pub matched: bool,
    /// Index of the first divergence when not matched: into the sequences
    /// for strict matching, into the reference for subsequence matching.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_divergence: Option<usize>,
}

/// Matches the trajectory's tool-call names against a reference sequence.
pub fn match_reference_trajectory(
    actual: &Trajectory,
    reference: &[String],
    ordering: MatchOrdering,
) -> TrajectoryMatch {
    let names = actual.tool_names();
    match ordering {
        MatchOrdering::Strict => {
            let shared = names.len().min(reference.len());
            for i in 0..shared {
                if names[i] != reference[i] {
                    return TrajectoryMatch {
                        matched: false,
                        first_divergence: Some(i),
                    };
                }
            }
            if names.len() == reference.len() {
                TrajectoryMatch {
                    matched: true,
                    first_divergence: None,
                }
            } else {
                TrajectoryMatch {
                    matched: false,
                    first_divergence: Some(shared),
                }
            }
        }
        MatchOrdering::Subsequence => {
            let mut cursor = names.iter();
            for (i, wanted) in reference.iter().enumerate() {
                if !cursor.any(|name| name == wanted) {
                    return TrajectoryMatch {
                        matched: false,
                        first_divergence: Some(i),
                    };
                }
            }
            TrajectoryMatch {
                matched: true,
                first_divergence: None,
            }
        }
    }
}

/// Behavioural rubric for a trajectory. At least one of `mandatory_steps`
/// or `max_steps` must be set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryRubric {
    /// Tool names that must occur in this order (as a subsequence).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mandatory_steps: Vec<String>,
    /// Tool-name sequences that must not occur contiguously.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub prohibited_patterns: Vec<Vec<String>>,
    /// Budget on the total number of steps of any kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
}

impl TrajectoryRubric {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.mandatory_steps.is_empty() && self.max_steps.is_none() {
            out.push("trajectory rubric needs mandatory_steps or max_steps".into());
        }
        if self.prohibited_patterns.iter().any(Vec::is_empty) {
            out.push("prohibited patterns must be non-empty sequences".into());
        }
        out
    }
}

/// Rubric evaluation outcome with one violation string per failed check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricOutcome {
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub violations: Vec<String>,
}

fn is_subsequence(haystack: &[String], needle: &[String]) -> bool {
    let mut cursor = haystack.iter();
    needle.iter().all(|wanted| cursor.any(|name| name == wanted))
}

/// Evaluates a trajectory against a behavioural rubric.
pub fn evaluate_trajectory_rubric(actual: &Trajectory, rubric: &TrajectoryRubric) -> RubricOutcome {
    let names = actual.tool_names();
    let mut violations = Vec::new();

    if !rubric.mandatory_steps.is_empty() && !is_subsequence(&names, &rubric.mandatory_steps) {
        for step in &rubric.mandatory_steps {
            if !names.contains(step) {
                violations.push(format!("missing mandatory step {step:?}"));
            }
        }
        if violations.is_empty() {
            violations.push(format!(
                "mandatory steps {:?} occur out of order",
                rubric.mandatory_steps
            ));
        }
    }

    for pattern in &rubric.prohibited_patterns {
        if !pattern.is_empty() && names.windows(pattern.len()).any(|w| w == pattern.as_slice()) {
            violations.push(format!("prohibited pattern {pattern:?} occurred"));
        }
    }

    if let Some(max) = rubric.max_steps {
        let count = actual.steps.len();
        if count > max {
            violations.push(format!("step budget exceeded: {count} > {max}"));
        }
    }

    RubricOutcome {
        pass: violations.is_empty(),
        violations,
    }
}

/// Layer-2 expectation a dataset case can declare on its trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryExpectation {
    Reference(ReferenceTrajectory),
    Rubric(TrajectoryRubric),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceTrajectory {
    pub tools: Vec<String>,
    #[serde(default)]
    pub ordering: MatchOrdering,
    /// Optional parameter-level expectations, aligned with `tools`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub calls: Vec<ExpectedCall>,
}

impl TrajectoryExpectation {
    pub fn validate(&self) -> Vec<String> {
        match self {
            TrajectoryExpectation::Reference(reference) => {
                let mut out = Vec::new();
                if reference.tools.is_empty() {
                    out.push("reference trajectory needs at least one tool".into());
                }
                if !reference.calls.is_empty() && reference.calls.len() != reference.tools.len() {
                    out.push("expected calls must align one-to-one with tools".into());
                }
                if !reference.calls.is_empty() && reference.ordering == MatchOrdering::Subsequence {
                    out.push("parameter expectations require strict ordering".into());
                }
                out
            }
            TrajectoryExpectation::Rubric(rubric) => rubric.validate(),
        }
    }
}

/// One state-retention check: a fact is established, a later probe should be
/// answered without re-asking for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetentionCheck {
    /// Text establishing the fact (must occur before the probe).
    pub established_fact: String,
    /// Text of the later probe turn.
    pub later_probe: String,
    /// Marker that must NOT appear in the answer to the probe.
    pub violating_marker: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionOutcome {
    pub pass: bool,
    /// Probes whose answers violated their checks.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_checks: Vec<String>,
}

fn contains_ci(haystack: &str, needle: &str) -> bool {
    haystack.to_lowercase().contains(&needle.to_lowercase())
}

/// Checks that facts established early in a transcript are retained when
/// probed later. Marker matching is case-insensitive.
pub fn evaluate_state_retention(
    transcript: &[Turn],
    checks: &[RetentionCheck],
) -> Result<RetentionOutcome, AgentError> {
    let mut failed_checks = Vec::new();
    for check in checks {
        let fact_at = transcript
            .iter()
            .position(|turn| contains_ci(&turn.text, &check.established_fact))
            .ok_or_else(|| {
                AgentError::InvalidScenario(format!(
                    "established fact {:?} does not occur in the transcript",
                    check.established_fact
                ))
            })?;
        let probe_at = transcript
            .iter()
            .enumerate()
            .skip(fact_at + 1)
            .find(|(_, turn)| contains_ci(&turn.text, &check.later_probe))
            .map(|(i, _)| i)
            .ok_or_else(|| {
                AgentError::InvalidScenario(format!(
                    "probe {:?} does not occur after the established fact",
                    check.later_probe
                ))
            })?;
        let answer = transcript
            .iter()
            .skip(probe_at + 1)
            .find(|turn| turn.role == "assistant")
            .ok_or_else(|| {
                AgentError::InvalidScenario(format!(
                    "probe {:?} has no assistant answer",
                    check.later_probe
                ))
            })?;
        if contains_ci(&answer.text, &check.violating_marker) {
            failed_checks.push(check.later_probe.clone());
        }
    }
    Ok(RetentionOutcome {
        pass: failed_checks.is_empty(),
        failed_checks,
    })
}

/// How a handoff scenario's two outputs must differ for the scenario to be
/// a valid probe of brief quality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DifferentialSpec {
    /// Any detectable difference between the two outputs.
    OutputsDiffer,
    /// The variation output contains a marker the baseline output lacks.
    VariationContains { marker: String },
}

impl DifferentialSpec {
    fn holds(&self, baseline: &Value, variation: &Value) -> bool {
        match self {
            DifferentialSpec::OutputsDiffer => baseline != variation,
            DifferentialSpec::VariationContains { marker } => {
                let base = value_text(baseline);
                let vari = value_text(variation);
                contains_ci(&vari, marker) && !contains_ci(&base, marker)
            }
        }
    }
}

fn value_text(value: &Value) -> String {
    match value {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Predicate on a single output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputPredicate {
    Equals { value: Value },
    Contains { value: String },
}

impl OutputPredicate {
    pub fn matches(&self, output: &Value) -> bool {
        match self {
            OutputPredicate::Equals { value } => output == value,
            OutputPredicate::Contains { value } => contains_ci(&value_text(output), value),
        }
    }
}

/// A differential probe of handoff-brief quality: the downstream agent is
/// invoked once with a complete brief and once with a degraded one, and the
/// outputs must differ in the declared way for the probe to be valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandoffScenario {
    pub scenario_id: String,
    pub baseline_brief: String,
    pub variation_brief: String,
    /// Downstream input template containing `{{brief}}`.
    pub downstream_input_builder: String,
    pub expected_differential: DifferentialSpec,
    /// What a correct baseline output looks like.
    pub baseline_expected: OutputPredicate,
}

impl HandoffScenario {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !self.downstream_input_builder.contains("{{brief}}") {
            out.push("downstream_input_builder must contain {{brief}}".into());
        }
        if self.baseline_brief == self.variation_brief {
            out.push("baseline and variation briefs must differ".into());
        }
        out
    }

    fn downstream_input(&self, brief: &str) -> String {
        self.downstream_input_builder.replace("{{brief}}", brief)
    }
}

/// Handoff scenario outcome. `handoff_pass` exists only for valid scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoffOutcome {
    pub scenario_id: String,
    #[serde(flatten)]
    pub status: HandoffStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_output: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variation_output: Option<Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum HandoffStatus {
    /// The differential held; the brief content demonstrably matters.
    Valid { handoff_pass: bool },
    /// The differential did not hold; the probe cannot score the handoff.
    Invalid,
    /// A SUT error prevented a conclusive comparison.
    Inconclusive { reason: String },
}

impl HandoffOutcome {
    pub fn is_valid(&self) -> bool {
        matches!(self.status, HandoffStatus::Valid { .. })
    }

    pub fn handoff_pass(&self) -> Option<bool> {
        match self.status {
            HandoffStatus::Valid { handoff_pass } => Some(handoff_pass),
            _ => None,
        }
    }
}

/// Runs one baseline/variation pair through the downstream agent.
pub fn run_handoff_scenario(scenario: &HandoffScenario, adapter: &dyn SutAdapter) -> HandoffOutcome {
    run_handoff_scenario_repeated(scenario, adapter, 1)
}

/// Runs `pairs` baseline/variation pairs. With a deterministic SUT one pair
/// suffices; with a probabilistic SUT the differential must hold in at least
/// [`HANDOFF_DIFFERENTIAL_MIN_RATE`] of conclusive pairs, and the baseline
/// output must satisfy the expectation at the same rate to pass.
pub fn run_handoff_scenario_repeated(
    scenario: &HandoffScenario,
    adapter: &dyn SutAdapter,
    pairs: usize,
) -> HandoffOutcome {
    let pairs = pairs.max(1);
    let mut conclusive = 0usize;
    let mut differential_held = 0usize;
    let mut baseline_passed = 0usize;
    let mut first_outputs: Option<(Value, Value)> = None;
    let mut last_error = String::new();

    for _ in 0..pairs {
        let baseline = adapter.invoke(&SutRequest::new(
            scenario.downstream_input(&scenario.baseline_brief),
        ));
        let variation = adapter.invoke(&SutRequest::new(
            scenario.downstream_input(&scenario.variation_brief),
        ));
        let (Some(base_out), Some(vari_out)) = (&baseline.output, &variation.output) else {
            let err = baseline
                .error
                .as_ref()
                .or(variation.error.as_ref())
                .map(|e| e.message.clone())
                .unwrap_or_else(|| "SUT returned no output".into());
            last_error = err;
            continue;
        };
        conclusive += 1;
        if first_outputs.is_none() {
            first_outputs = Some((base_out.clone(), vari_out.clone()));
        }
        if scenario.expected_differential.holds(base_out, vari_out) {
            differential_held += 1;
        }
        if scenario.baseline_expected.matches(base_out) {
            baseline_passed += 1;
        }
    }

    let Some((baseline_output, variation_output)) = first_outputs else {
        return HandoffOutcome {
            scenario_id: scenario.scenario_id.clone(),
            status: HandoffStatus::Inconclusive { reason: last_error },
            baseline_output: None,
            variation_output: None,
        };
    };

    let differential_rate = differential_held as f64 / conclusive as f64;
    let baseline_pass_rate = baseline_passed as f64 / conclusive as f64;
    let status = if differential_rate >= HANDOFF_DIFFERENTIAL_MIN_RATE {
        HandoffStatus::Valid {
            handoff_pass: baseline_pass_rate >= HANDOFF_DIFFERENTIAL_MIN_RATE,
        }
    } else {
        HandoffStatus::Invalid
    };
    HandoffOutcome {
        scenario_id: scenario.scenario_id.clone(),
        status,
        baseline_output: Some(baseline_output),
        variation_output: Some(variation_output),
    }
}

/// Kind of failure injected at a target tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureKind {
    ApiError,
    EmptyResult,
    MalformedOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectedFailure {
    pub kind: FailureKind,
    pub target_tool: String,
}

/// Recovery behaviour a scenario expects after the injected failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryKind {
    Retry,
    Fallback,
    Clarify,
    Terminate,
}

/// Recovery behaviour actually observed in the transcript.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservedRecovery {
    Retry,
    Fallback,
    Clarify,
    Terminate,
    Unknown,
}

impl ObservedRecovery {
    fn matches(self, expected: RecoveryKind) -> bool {
        matches!(
            (self, expected),
            (ObservedRecovery::Retry, RecoveryKind::Retry)
                | (ObservedRecovery::Fallback, RecoveryKind::Fallback)
                | (ObservedRecovery::Clarify, RecoveryKind::Clarify)
                | (ObservedRecovery::Terminate, RecoveryKind::Terminate)
        )
    }
}

fn default_loop_threshold() -> usize {
    DEFAULT_LOOP_THRESHOLD
}

/// A failure-injection scenario: run the task with a failure injected at the
/// target tool and classify the agent's recovery.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectionScenario {
    pub scenario_id: String,
    pub task_input: String,
    pub injected_failure: InjectedFailure,
    pub expected_recovery: RecoveryKind,
    /// Declared alternate tool; required for a fallback classification.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_tool: Option<String>,
    /// Post-failure calls to the target tool beyond this count flag a loop.
    #[serde(default = "default_loop_threshold")]
    pub loop_threshold: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InjectionOutcome {
    pub scenario_id: String,
    pub observed: ObservedRecovery,
    /// Set when post-failure retries exceeded the loop threshold.
    pub loop_detected: bool,
    pub pass: bool,
}

/// Classifies recovery from the steps after the first call to the target
/// tool (the injection point), on first decisive evidence:
///
/// - a call back to the target tool → retry (a loop when repeats exceed the
///   threshold)
/// - a call to the declared alternate tool → fallback
/// - a reasoning turn that asks a question → clarify
/// - no further tool calls, ending in a non-question summary → terminate
/// - anything else (including a missing injection point) → unknown
fn classify_recovery(
    transcript: &[TrajectoryStep],
    scenario: &InjectionScenario,
) -> (ObservedRecovery, bool) {
    let target = &scenario.injected_failure.target_tool;
    let injection_at = transcript.iter().position(
        |step| matches!(step, TrajectoryStep::ToolCall { tool, .. } if tool == target),
    );
    let Some(injection_at) = injection_at else {
        return (ObservedRecovery::Unknown, false);
    };
    let post = &transcript[injection_at + 1..];
    if post.is_empty() {
        return (ObservedRecovery::Unknown, false);
    }

    let retries = post
        .iter()
        .filter(|step| matches!(step, TrajectoryStep::ToolCall { tool, .. } if tool == target))
        .count();
    let loop_detected = retries > scenario.loop_threshold;

    for step in post {
        match step {
            TrajectoryStep::ToolCall { tool, .. } if tool == target => {
                return (ObservedRecovery::Retry, loop_detected);
            }
            TrajectoryStep::ToolCall { tool, .. } => {
                if scenario.fallback_tool.as_deref() == Some(tool.as_str()) {
                    return (ObservedRecovery::Fallback, loop_detected);
                }
                return (ObservedRecovery::Unknown, loop_detected);
            }
            TrajectoryStep::Reasoning { text } if text.contains('?') => {
                return (ObservedRecovery::Clarify, loop_detected);
            }
            _ => {}
        }
    }

    let closing_text = post.iter().rev().find_map(|step| match step {
        TrajectoryStep::Reasoning { text } => Some(text.as_str()),
        _ => None,
    });
    match closing_text {
        Some(text) if !text.contains('?') => (ObservedRecovery::Terminate, loop_detected),
        _ => (ObservedRecovery::Unknown, loop_detected),
    }
}

/// Invokes the task with the scenario's failure injected (the adapter is
/// expected to simulate it) and classifies the observed recovery.
pub fn run_failure_injection(
    scenario: &InjectionScenario,
    adapter: &dyn SutAdapter,
) -> InjectionOutcome {
    let response = adapter.invoke(&SutRequest::new(scenario.task_input.clone()));
    outcome_from_response(scenario, &response)
}

/// Classifies a response transcript that already contains the injected
/// failure.
pub fn outcome_from_response(
    scenario: &InjectionScenario,
    response: &SutResponse,
) -> InjectionOutcome {
    let (observed, loop_detected) = match &response.transcript {
        Some(steps) => classify_recovery(steps, scenario),
        None => (ObservedRecovery::Unknown, false),
    };
    InjectionOutcome {
        scenario_id: scenario.scenario_id.clone(),
        observed,
        loop_detected,
        pass: observed.matches(scenario.expected_recovery) && !loop_detected,
    }
}

/// End-to-end task with judgeable success criteria.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoalTask {
    pub task_id: String,
    pub input: String,
    pub success_criteria: Vec<String>,
    /// Reference step count for the trajectory-efficiency KPI.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimal_steps: Option<usize>,
}

impl GoalTask {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.success_criteria.is_empty() {
            out.push("goal task needs at least one success criterion".into());
        }
        if self.optimal_steps == Some(0) {
            out.push("optimal_steps must be positive".into());
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionResult {
    pub criterion: String,
    pub score: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalOutcome {
    pub task_id: String,
    pub per_criterion: Vec<CriterionResult>,
    /// Mean criterion score.
    pub score: f64,
    /// True only when every criterion scored 1.
    pub pass: bool,
}

/// Judges each success criterion against the rendered transcript. An empty
/// transcript scores 0 on every criterion without consulting the judge.
pub fn evaluate_goal_completion(
    task: &GoalTask,
    transcript_text: &str,
    judge: &dyn Judge,
) -> Result<GoalOutcome, JudgeError> {
    if task.success_criteria.is_empty() {
        return Err(JudgeError::Config(format!(
            "goal task {:?} has no success criteria",
            task.task_id
        )));
    }
    let mut per_criterion = Vec::with_capacity(task.success_criteria.len());
    if transcript_text.trim().is_empty() {
        for criterion in &task.success_criteria {
            per_criterion.push(CriterionResult {
                criterion: criterion.clone(),
                score: 0,
            });
        }
    } else {
        for criterion in &task.success_criteria {
            let rubric = Rubric {
                rubric_id: criterion.clone(),
                dimension: criterion.clone(),
                score0_description: format!("The transcript does not show: {criterion}"),
                score1_description: format!("The transcript shows: {criterion}"),
                with_reference: false,
            };
            let verdict = judge.judge_with_rubric(&task.input, transcript_text, None, &rubric)?;
            per_criterion.push(CriterionResult {
                criterion: criterion.clone(),
                score: verdict.score,
            });
        }
    }
    let total: u32 = per_criterion.iter().map(|c| u32::from(c.score)).sum();
    let score = f64::from(total) / per_criterion.len() as f64;
    Ok(GoalOutcome {
        task_id: task.task_id.clone(),
        score,
        pass: per_criterion.iter().all(|c| c.score == 1),
        per_criterion,
    })
}
