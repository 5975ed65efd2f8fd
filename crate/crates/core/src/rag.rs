//! Retrieval-augmented generation metrics, quality gates, and diagnosis.
//!
//! Four count-based metrics profile a RAG sample: context precision (how much
//! of what was retrieved is relevant), context recall (how much of what was
//! needed is covered), faithfulness (how much of the response is grounded in
//! the retrieved context), and answer relevancy (how directly the response
//! answers the query). The per-claim and per-chunk judgments are pluggable;
//! the engine only does the counting.
//!
//! Metrics that cannot be computed (no chunks retrieved, no claims extracted)
//! are *undefined*, never zero, so a pipeline bug cannot masquerade as a bad
//! score. Gates refuse to run on undefined metrics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::judge::JudgeError;

pub const METRIC_FAITHFULNESS: &str = "faithfulness";
pub const METRIC_CONTEXT_RECALL: &str = "context_recall";
pub const METRIC_CONTEXT_PRECISION: &str = "context_precision";
pub const METRIC_ANSWER_RELEVANCY: &str = "answer_relevancy";

#[derive(Debug, thiserror::Error)]
pub enum RagError {
    #[error("metric {0:?} is undefined for this sample")]
    UndefinedMetric(String),
}

/// One RAG interaction with the claim decompositions needed for counting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RagSample {
    pub query: String,
    pub retrieved: Vec<String>,
    pub response: String,
    /// Claims decomposed from the response (for faithfulness).
    #[serde(default)]
    pub response_claims: Vec<String>,
    /// Claims the reference answer requires (for context recall).
    #[serde(default)]
    pub reference_claims: Vec<String>,
}

/// The four metric values for one sample; `None` means undefined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RagProfile {
    pub context_precision: Option<f64>,
    pub context_recall: Option<f64>,
    pub faithfulness: Option<f64>,
    pub answer_relevancy: Option<f64>,
}

/// Fraction of retrieved chunks relevant to the query.
/// Undefined when nothing was retrieved.
pub fn context_precision(
    sample: &RagSample,
    mut relevant: impl FnMut(&str, &str) -> bool,
) -> Option<f64> {
    if sample.retrieved.is_empty() {
        return None;
    }
    let hits = sample
        .retrieved
        .iter()
        .filter(|chunk| relevant(chunk, &sample.query))
        .count();
    Some(hits as f64 / sample.retrieved.len() as f64)
}

/// Fraction of reference claims supported by the retrieved chunks.
/// Undefined when there are no reference claims; zero when nothing was
/// retrieved, since no claim can be supported by an empty context.
pub fn context_recall(
    sample: &RagSample,
    mut supported: impl FnMut(&str, &[String]) -> bool,
) -> Option<f64> {
    claim_coverage(&sample.reference_claims, &sample.retrieved, &mut supported)
}

/// Fraction of response claims supported by the retrieved chunks.
/// Undefined when there are no response claims; zero when nothing was
/// retrieved.
pub fn faithfulness(
    sample: &RagSample,
    mut supported: impl FnMut(&str, &[String]) -> bool,
) -> Option<f64> {
    claim_coverage(&sample.response_claims, &sample.retrieved, &mut supported)
}

fn claim_coverage(
    claims: &[String],
    retrieved: &[String],
    supported: &mut impl FnMut(&str, &[String]) -> bool,
) -> Option<f64> {
    if claims.is_empty() {
        return None;
    }
    if retrieved.is_empty() {
        return Some(0.0);
    }
    let hits = claims
        .iter()
        .filter(|claim| supported(claim, retrieved))
        .count();
    Some(hits as f64 / claims.len() as f64)
}

/// Degree to which the response answers the query, delegated to a judge
/// returning a value in [0, 1]. Judge errors propagate; out-of-range values
/// are malformed.
pub fn answer_relevancy(
    sample: &RagSample,
    judge: impl FnOnce(&str, &str) -> Result<f64, JudgeError>,
) -> Result<f64, JudgeError> {
    let value = judge(&sample.query, &sample.response)?;
    if !(0.0..=1.0).contains(&value) {
        return Err(JudgeError::Malformed(format!(
            "answer relevancy {value} is outside [0, 1]"
        )));
    }
    Ok(value)
}

/// Claim-support judgment used by the default profile: a claim is supported
/// when some retrieved chunk contains it verbatim (case-insensitive).
pub fn substring_support(claim: &str, retrieved: &[String]) -> bool {
    let needle = claim.to_lowercase();
    retrieved
        .iter()
        .any(|chunk| chunk.to_lowercase().contains(&needle))
}

/// Deployment minimums per metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RagGates {
    pub faithfulness: f64,
    pub context_recall: f64,
    pub context_precision: f64,
    pub answer_relevancy: f64,
}

impl Default for RagGates {
    /// Faithfulness 0.90, context recall 0.85, context precision 0.80,
    /// answer relevancy 0.80.
    fn default() -> Self {
        Self {
            faithfulness: 0.90,
            context_recall: 0.85,
            context_precision: 0.80,
            answer_relevancy: 0.80,
        }
    }
}

impl RagGates {
    pub fn threshold(&self, metric: &str) -> Option<f64> {
        match metric {
            METRIC_FAITHFULNESS => Some(self.faithfulness),
            METRIC_CONTEXT_RECALL => Some(self.context_recall),
            METRIC_CONTEXT_PRECISION => Some(self.context_precision),
            METRIC_ANSWER_RELEVANCY => Some(self.answer_relevancy),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), RagError> {
        for (name, value) in [
            (METRIC_FAITHFULNESS, self.faithfulness),
            (METRIC_CONTEXT_RECALL, self.context_recall),
            (METRIC_CONTEXT_PRECISION, self.context_precision),
            (METRIC_ANSWER_RELEVANCY, self.answer_relevancy),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(RagError::UndefinedMetric(format!(
                    "gate threshold {name} = {value} is outside [0, 1]"
                )));
            }
        }
        Ok(())
    }
}

/// Gate check across all four metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RagGateOutcome {
    /// Per-metric pass, keyed by metric name.
    pub gate_results: BTreeMap<String, bool>,
    /// True only when every gate passed.
    pub deploy_approved: bool,
}

fn defined(profile: &RagProfile, metric: &str) -> Result<f64, RagError> {
    let value = match metric {
        METRIC_FAITHFULNESS => profile.faithfulness,
        METRIC_CONTEXT_RECALL => profile.context_recall,
        METRIC_CONTEXT_PRECISION => profile.context_precision,
        METRIC_ANSWER_RELEVANCY => profile.answer_relevancy,
        _ => None,
    };
    value.ok_or_else(|| RagError::UndefinedMetric(metric.to_string()))
}

/// Applies the deployment gates. Every metric must be defined; a metric
/// passes its gate when `score >= threshold`.
pub fn apply_rag_gates(profile: &RagProfile, gates: &RagGates) -> Result<RagGateOutcome, RagError> {
    let mut gate_results = BTreeMap::new();
    for metric in [
        METRIC_ANSWER_RELEVANCY,
        METRIC_CONTEXT_PRECISION,
        METRIC_CONTEXT_RECALL,
        METRIC_FAITHFULNESS,
    ] {
        let score = defined(profile, metric)?;
        let threshold = gates.threshold(metric).expect("known metric");
        gate_results.insert(metric.to_string(), score >= threshold);
    }
    let deploy_approved = gate_results.values().all(|pass| *pass);
    Ok(RagGateOutcome {
        gate_results,
        deploy_approved,
    })
}

/// Failure-pattern diagnosis from the metric profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RagDiagnosis {
    RetrievalPipelineBroken,
    MissingDocuments,
    Hallucination,
    PromptIssue,
    PerformingWell,
}

impl RagDiagnosis {
    pub fn description(self) -> &'static str {
        match self {
            RagDiagnosis::RetrievalPipelineBroken => {
                "Retrieval pipeline broken: check chunking and embeddings"
            }
            RagDiagnosis::MissingDocuments => {
                "Missing documents: recall issue, check index coverage"
            }
            RagDiagnosis::Hallucination => "Hallucination: generation grounding insufficient",
            RagDiagnosis::PromptIssue => "Prompt issue: response shaping or instruction clarity",
            RagDiagnosis::PerformingWell => "System performing well across all dimensions",
        }
    }
}

/// Classifies each metric low/high against its gate threshold and returns the
/// first matching diagnosis, checked lowest pipeline stage first:
///
/// 1. precision low → retrieval pipeline broken
/// 2. recall low (precision high) → missing documents
/// 3. faithfulness low (retrieval high) → hallucination
/// 4. relevancy low (everything else high) → prompt issue
/// 5. all high → performing well
///
/// Precision and recall must be defined; faithfulness and relevancy are only
/// needed once retrieval looks healthy.
pub fn diagnose_rag(profile: &RagProfile, gates: &RagGates) -> Result<RagDiagnosis, RagError> {
    let precision = defined(profile, METRIC_CONTEXT_PRECISION)?;
    let recall = defined(profile, METRIC_CONTEXT_RECALL)?;
    if precision < gates.context_precision {
        return Ok(RagDiagnosis::RetrievalPipelineBroken);
    }
    if recall < gates.context_recall {
        return Ok(RagDiagnosis::MissingDocuments);
    }
    let faithfulness = defined(profile, METRIC_FAITHFULNESS)?;
    if faithfulness < gates.faithfulness {
        return Ok(RagDiagnosis::Hallucination);
    }
    let relevancy = defined(profile, METRIC_ANSWER_RELEVANCY)?;
    if relevancy < gates.answer_relevancy {
        return Ok(RagDiagnosis::PromptIssue);
    }
    Ok(RagDiagnosis::PerformingWell)
}
