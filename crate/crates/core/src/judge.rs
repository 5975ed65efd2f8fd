//! Binary rubric judging.
//!
//! A rubric names one evaluation dimension and describes what a 0 and a 1
//! look like; a judge maps (input, response, optional reference, rubric) to a
//! binary verdict with a rationale. Scripted judges answer from a lookup
//! table keyed by rubric id and trimmed response text; remote judges POST to
//! an HTTP endpoint and expect `{"score": 0|1, "rationale": ...}` back.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::DimensionScores;

/// Binary scoring rubric for one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rubric {
    pub rubric_id: String,
    pub dimension: String,
    pub score0_description: String,
    pub score1_description: String,
    /// When set, judging requires the case's reference output.
    #[serde(default)]
    pub with_reference: bool,
}

/// One judged dimension: score 0 or 1 plus the judge's rationale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeVerdict {
    pub dimension: String,
    pub score: u8,
    pub rationale: String,
}

#[derive(Debug, thiserror::Error)]
pub enum JudgeError {
    #[error("judge unavailable: {0}")]
    Unavailable(String),
    #[error("rubric {rubric_id:?} requires a reference output, but the case has none")]
    MissingReference { rubric_id: String },
    #[error("malformed judge response: {0}")]
    Malformed(String),
    #[error("{0}")]
    Config(String),
}

/// Scores one response against one rubric.
pub trait Judge: Send + Sync {
    fn judge_with_rubric(
        &self,
        input: &str,
        response: &str,
        reference: Option<&str>,
        rubric: &Rubric,
    ) -> Result<JudgeVerdict, JudgeError>;
}

pub(crate) fn check_reference(
    rubric: &Rubric,
    reference: Option<&str>,
) -> Result<(), JudgeError> {
    if rubric.with_reference && reference.is_none() {
        return Err(JudgeError::MissingReference {
            rubric_id: rubric.rubric_id.clone(),
        });
    }
    Ok(())
}

/// Loads a rubric file: a JSON array of rubrics with distinct ids.
pub fn load_rubrics(path: &Path) -> Result<Vec<Rubric>, JudgeError> {
    let text = std::fs::read_to_string(path)
        .map_err(|err| JudgeError::Config(format!("cannot read {}: {err}", path.display())))?;
    let rubrics: Vec<Rubric> = serde_json::from_str(&text)
        .map_err(|err| JudgeError::Config(format!("cannot parse {}: {err}", path.display())))?;
    let mut seen = BTreeSet::new();
    for rubric in &rubrics {
        if !seen.insert(rubric.rubric_id.clone()) {
            return Err(JudgeError::Config(format!(
                "duplicate rubric id {:?} in {}",
                rubric.rubric_id,
                path.display()
            )));
        }
    }
    Ok(rubrics)
}

/// Scores a response on several rubrics at once.
///
/// Each rubric must target a distinct dimension; a duplicate is a
/// configuration error naming the dimension.
pub fn score_dimensions(
    judge: &dyn Judge,
    input: &str,
    response: &str,
    reference: Option<&str>,
    rubrics: &[Rubric],
) -> Result<DimensionScores, JudgeError> {
    let mut seen = BTreeSet::new();
    for rubric in rubrics {
        if !seen.insert(rubric.dimension.clone()) {
            return Err(JudgeError::Config(format!(
                "dimension {:?} is scored by more than one rubric",
                rubric.dimension
            )));
        }
    }
    let mut scores = DimensionScores::new();
    for rubric in rubrics {
        let verdict = judge.judge_with_rubric(input, response, reference, rubric)?;
        scores.insert(verdict.dimension, f64::from(verdict.score));
    }
    Ok(scores)
}

/// Normalizes a scripted-table key: response text is trimmed; JSON values are
/// rendered in canonical compact form.
fn table_key(value: &Value) -> String {
    match value {
        Value::String(s) => s.trim().to_string(),
        other => other.to_string(),
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptedJudgeEntry {
    rubric_id: String,
    response: Value,
    score: u8,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptedJudgeFile {
    #[serde(default)]
    default_score: Option<u8>,
    #[serde(default)]
    entries: Vec<ScriptedJudgeEntry>,
}

/// Deterministic fixture judge: a lookup table with a default score.
#[derive(Debug)]
pub struct ScriptedJudge {
    default_score: u8,
    entries: HashMap<(String, String), u8>,
}

impl ScriptedJudge {
    pub fn new(default_score: u8) -> Self {
        Self {
            default_score,
            entries: HashMap::new(),
        }
    }

    /// Pins the score for one (rubric id, response) pair.
    pub fn with_entry(mut self, rubric_id: &str, response: &Value, score: u8) -> Self {
        self.entries
            .insert((rubric_id.to_string(), table_key(response)), score);
        self
    }

    pub fn from_file(path: &Path) -> Result<Self, JudgeError> {
        let text = std::fs::read_to_string(path)
            .map_err(|err| JudgeError::Config(format!("cannot read {}: {err}", path.display())))?;
        let file: ScriptedJudgeFile = serde_json::from_str(&text)
            .map_err(|err| JudgeError::Config(format!("cannot parse {}: {err}", path.display())))?;
        for entry in &file.entries {
            if entry.score > 1 {
                return Err(JudgeError::Config(format!(
                    "scripted judge score {} is not binary",
                    entry.score
                )));
            }
        }
        let default_score = file.default_score.unwrap_or(1);
        if default_score > 1 {
            return Err(JudgeError::Config(format!(
                "scripted judge default score {default_score} is not binary"
            )));
        }
        let mut judge = Self::new(default_score);
        for entry in file.entries {
            judge = judge.with_entry(&entry.rubric_id, &entry.response, entry.score);
        }
        Ok(judge)
    }
}

impl Judge for ScriptedJudge {
    fn judge_with_rubric(
        &self,
        _input: &str,
        response: &str,
        reference: Option<&str>,
        rubric: &Rubric,
    ) -> Result<JudgeVerdict, JudgeError> {
        check_reference(rubric, reference)?;
        let key = (rubric.rubric_id.clone(), response.trim().to_string());
        let (score, rationale) = match self.entries.get(&key) {
            Some(score) => (*score, "scripted verdict: matched table entry"),
            None => (self.default_score, "scripted verdict: default score"),
        };
        Ok(JudgeVerdict {
            dimension: rubric.dimension.clone(),
            score,
            rationale: rationale.to_string(),
        })
    }
}

/// Counting semaphore bounding concurrent remote judge calls.
struct Semaphore {
    permits: Mutex<usize>,
    available: Condvar,
}

impl Semaphore {
    fn new(permits: usize) -> Self {
        Self {
            permits: Mutex::new(permits),
            available: Condvar::new(),
        }
    }

    fn acquire(&self) {
        let mut permits = self.permits.lock().expect("semaphore poisoned");
        while *permits == 0 {
            permits = self.available.wait(permits).expect("semaphore poisoned");
        }
        *permits -= 1;
    }

    fn release(&self) {
        *self.permits.lock().expect("semaphore poisoned") += 1;
        self.available.notify_one();
    }
}

#[derive(Debug, Deserialize)]
struct RemoteVerdict {
    score: i64,
    #[serde(default)]
    rationale: Option<String>,
}

/// Judge backed by an HTTP endpoint.
///
/// The request body is `{"input", "response", "reference", "rubric"}`; the
/// endpoint must answer `{"score": 0|1, "rationale": ...}`. At most
/// `max_in_flight` calls run concurrently.
pub struct RemoteJudge {
    url: String,
    agent: ureq::Agent,
    semaphore: Semaphore,
}

impl RemoteJudge {
    pub fn new(url: impl Into<String>, timeout: Duration, max_in_flight: usize) -> Self {
        Self {
            url: url.into(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
            semaphore: Semaphore::new(max_in_flight.max(1)),
        }
    }
}

impl Judge for RemoteJudge {
    fn judge_with_rubric(
        &self,
        input: &str,
        response: &str,
        reference: Option<&str>,
        rubric: &Rubric,
    ) -> Result<JudgeVerdict, JudgeError> {
        check_reference(rubric, reference)?;
        let body = serde_json::json!({
            "input": input,
            "response": response,
            "reference": reference,
            "rubric": rubric,
        });
        self.semaphore.acquire();
        let result = self.agent.post(&self.url).send_json(body);
        self.semaphore.release();

        let http_response = result.map_err(|err| match err {
            ureq::Error::Status(code, _) => {
                JudgeError::Unavailable(format!("judge endpoint returned HTTP {code}"))
            }
            ureq::Error::Transport(t) => JudgeError::Unavailable(format!("transport failure: {t}")),
        })?;
        let verdict: RemoteVerdict = http_response
            .into_json()
            .map_err(|err| JudgeError::Malformed(format!("cannot parse judge response: {err}")))?;
        if verdict.score != 0 && verdict.score != 1 {
            return Err(JudgeError::Malformed(format!(
                "judge score {} is not binary",
                verdict.score
            )));
        }
        Ok(JudgeVerdict {
            dimension: rubric.dimension.clone(),
            score: verdict.score as u8,
            rationale: verdict.rationale.unwrap_or_default(),
        })
    }
}
