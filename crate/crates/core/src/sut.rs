//! Adapters for the system under test.
//!
//! Every SUT is reached through the same request/response wire shape, so the
//! engine can evaluate a scripted fixture, a local process, or a remote HTTP
//! endpoint interchangeably. A request is one JSON object
//! `{"input": ..., "context": [...], "metadata": {...}}`; the response carries
//! exactly one of `"output"` or `"error": {"kind", "message"}`, plus optional
//! `"tool_calls"` and `"transcript"` for agent evaluation.
//!
//! Transport failures surface in-band as error kind `sut_unavailable`;
//! responses that cannot be parsed surface as `sut_malformed`. Callers decide
//! what an error means (consistency runs count them as failures).

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::mpsc;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::agent::{ToolCall, TrajectoryStep};

pub const ERROR_KIND_UNAVAILABLE: &str = "sut_unavailable";
pub const ERROR_KIND_MALFORMED: &str = "sut_malformed";

/// Default per-call timeout for process and HTTP adapters.
pub const DEFAULT_CALL_TIMEOUT: Duration = Duration::from_secs(60);

/// One conversation turn, used both for request context and for transcripts
/// inspected by state-retention checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: String,
    pub text: String,
}

impl Turn {
    pub fn new(role: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            role: role.into(),
            text: text.into(),
        }
    }
}

/// Request sent to the SUT.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SutRequest {
    pub input: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub context: Vec<Turn>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metadata: BTreeMap<String, Value>,
}

impl SutRequest {
    pub fn new(input: impl Into<String>) -> Self {
        Self {
            input: input.into(),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SutError {
    pub kind: String,
    pub message: String,
}

/// Response from the SUT: exactly one of `output` or `error`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SutResponse {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<SutError>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tool_calls: Option<Vec<ToolCall>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<Vec<TrajectoryStep>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency_ms: Option<u64>,
}

impl SutResponse {
    pub fn from_output(output: Value) -> Self {
        Self {
            output: Some(output),
            ..Self::default()
        }
    }

    pub fn from_error(kind: &str, message: impl Into<String>) -> Self {
        Self {
            error: Some(SutError {
                kind: kind.to_string(),
                message: message.into(),
            }),
            ..Self::default()
        }
    }

    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }

    /// The response text used for judging and scripted lookups: string
    /// outputs verbatim, structured outputs in canonical compact JSON.
    pub fn output_text(&self) -> Option<String> {
        match &self.output {
            Some(Value::String(s)) => Some(s.clone()),
            Some(other) => Some(other.to_string()),
            None => None,
        }
    }

    fn check_shape(&self) -> Result<(), String> {
        match (&self.output, &self.error) {
            (Some(_), Some(_)) => Err("response carries both output and error".into()),
            (None, None) => Err("response carries neither output nor error".into()),
            _ => Ok(()),
        }
    }

    /// Parses a wire response, mapping shape violations to `sut_malformed`.
    pub fn parse_wire(text: &str) -> Self {
        match serde_json::from_str::<SutResponse>(text) {
            Ok(response) => match response.check_shape() {
                Ok(()) => response,
                Err(message) => Self::from_error(ERROR_KIND_MALFORMED, message),
            },
            Err(err) => Self::from_error(
                ERROR_KIND_MALFORMED,
                format!("cannot parse SUT response: {err}"),
            ),
        }
    }
}

/// A system under test. Implementations must be callable from several worker
/// threads at once.
pub trait SutAdapter: Send + Sync {
    fn invoke(&self, request: &SutRequest) -> SutResponse;

    /// `n` independent invocations of the same request, in run order.
    /// Per-call errors are embedded in the returned responses.
    fn invoke_repeated(&self, request: &SutRequest, n: usize) -> Vec<SutResponse> {
        (0..n).map(|_| self.invoke(request)).collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AdapterConfigError {
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
    #[error("scripted behaviour {key:?}: {message}")]
    InvalidBehaviour { key: String, message: String },
    #[error("{0}")]
    Invalid(String),
}

/// One weighted response candidate of a scripted behaviour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedCandidate {
    pub weight: f64,
    pub response: SutResponse,
}

fn validate_candidates(key: &str, candidates: &[ScriptedCandidate]) -> Result<(), AdapterConfigError> {
    if candidates.is_empty() {
        return Err(AdapterConfigError::InvalidBehaviour {
            key: key.to_string(),
            message: "needs at least one candidate".into(),
        });
    }
    if let Some(c) = candidates.iter().find(|c| c.weight <= 0.0) {
        return Err(AdapterConfigError::InvalidBehaviour {
            key: key.to_string(),
            message: format!("weight {} is not positive", c.weight),
        });
    }
    let sum: f64 = candidates.iter().map(|c| c.weight).sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(AdapterConfigError::InvalidBehaviour {
            key: key.to_string(),
            message: format!("weights sum to {sum}, expected 1"),
        });
    }
    Ok(())
}

/// Scripted adapter file: a map from input text to weighted candidates.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedSutFile {
    #[serde(default)]
    pub seed: Option<u64>,
    pub behaviours: BTreeMap<String, Vec<ScriptedCandidate>>,
}

/// Deterministic fixture SUT.
///
/// Each input key draws from its own substream seeded by `(seed, key)`, with
/// draws numbered in invocation order. Replay with the same seed therefore
/// reproduces responses exactly, independent of how concurrent workers
/// interleave calls for *different* keys.
#[derive(Debug)]
pub struct ScriptedAdapter {
    seed: u64,
    behaviours: BTreeMap<String, Vec<ScriptedCandidate>>,
    streams: Mutex<HashMap<String, ChaCha8Rng>>,
}

impl ScriptedAdapter {
    pub fn new(
        seed: u64,
        behaviours: BTreeMap<String, Vec<ScriptedCandidate>>,
    ) -> Result<Self, AdapterConfigError> {
        for (key, candidates) in &behaviours {
            validate_candidates(key, candidates)?;
        }
        Ok(Self {
            seed,
            behaviours,
            streams: Mutex::new(HashMap::new()),
        })
    }

    pub fn from_file(path: &Path, seed_override: Option<u64>) -> Result<Self, AdapterConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| AdapterConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let file: ScriptedSutFile =
            serde_json::from_str(&text).map_err(|source| AdapterConfigError::Parse {
                path: path.to_path_buf(),
                source,
            })?;
        let seed = seed_override.or(file.seed).unwrap_or(0);
        Self::new(seed, file.behaviours)
    }

    fn key_rng(&self, key: &str) -> ChaCha8Rng {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(key.as_bytes());
        let digest = hasher.finalize();
        let mut bytes = [0u8; 32];
        bytes.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(bytes)
    }
}

impl SutAdapter for ScriptedAdapter {
    fn invoke(&self, request: &SutRequest) -> SutResponse {
        let Some(candidates) = self.behaviours.get(&request.input) else {
            return SutResponse::from_error(
                ERROR_KIND_UNAVAILABLE,
                format!("no scripted behaviour for input {:?}", request.input),
            );
        };
        if candidates.len() == 1 {
            return candidates[0].response.clone();
        }
        let mut streams = self.streams.lock().expect("scripted streams poisoned");
        let rng = streams
            .entry(request.input.clone())
            .or_insert_with(|| self.key_rng(&request.input));
        let draw: f64 = rng.random();
        let mut cumulative = 0.0;
        for candidate in candidates {
            cumulative += candidate.weight;
            if draw < cumulative {
                return candidate.response.clone();
            }
        }
        // Weight rounding can leave the final cumulative a hair under 1.0.
        candidates
            .last()
            .map(|c| c.response.clone())
            .unwrap_or_default()
    }
}

fn wait_with_deadline(
    child: &mut std::process::Child,
    deadline: Instant,
) -> Option<std::process::ExitStatus> {
    loop {
        match child.try_wait() {
            Ok(Some(status)) => return Some(status),
            Ok(None) if Instant::now() < deadline => {
                std::thread::sleep(Duration::from_millis(2))
            }
            _ => return None,
        }
    }
}

/// Adapter that spawns a child process per call and exchanges one JSON line
/// on stdin/stdout.
#[derive(Debug)]
pub struct CommandAdapter {
    argv: Vec<String>,
    timeout: Duration,
    retries: u32,
}

impl CommandAdapter {
    pub fn new(argv: Vec<String>, timeout: Duration, retries: u32) -> Result<Self, AdapterConfigError> {
        if argv.is_empty() {
            return Err(AdapterConfigError::Invalid(
                "command adapter needs a non-empty argv".into(),
            ));
        }
        Ok(Self {
            argv,
            timeout,
            retries,
        })
    }

    fn invoke_once(&self, request: &SutRequest) -> SutResponse {
        let payload = match serde_json::to_string(request) {
            Ok(p) => p,
            Err(err) => {
                return SutResponse::from_error(
                    ERROR_KIND_UNAVAILABLE,
                    format!("cannot serialize request: {err}"),
                )
            }
        };
        let deadline = Instant::now() + self.timeout;
        let mut child = match Command::new(&self.argv[0])
            .args(&self.argv[1..])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
        {
            Ok(child) => child,
            Err(err) => {
                return SutResponse::from_error(
                    ERROR_KIND_UNAVAILABLE,
                    format!("cannot spawn {:?}: {err}", self.argv[0]),
                )
            }
        };

        if let Some(mut stdin) = child.stdin.take() {
            let _ = writeln!(stdin, "{payload}");
        }

        let (tx, rx) = mpsc::channel();
        let mut stdout = child.stdout.take().expect("stdout was piped");
        std::thread::spawn(move || {
            let mut buffer = String::new();
            let read = stdout.read_to_string(&mut buffer);
            let _ = tx.send(read.map(|_| buffer));
        });

        let remaining = deadline.saturating_duration_since(Instant::now());
        let stdout_text = match rx.recv_timeout(remaining) {
            Ok(Ok(text)) => text,
            Ok(Err(err)) => {
                let _ = child.kill();
                let _ = child.wait();
                return SutResponse::from_error(
                    ERROR_KIND_UNAVAILABLE,
                    format!("cannot read SUT stdout: {err}"),
                );
            }
            Err(_) => {
                let _ = child.kill();
                let _ = child.wait();
                return SutResponse::from_error(
                    ERROR_KIND_UNAVAILABLE,
                    format!("SUT call timed out after {:?}", self.timeout),
                );
            }
        };

        let status = match wait_with_deadline(&mut child, deadline) {
            Some(status) => status,
            None => {
                let _ = child.kill();
                let _ = child.wait();
                return SutResponse::from_error(
                    ERROR_KIND_UNAVAILABLE,
                    format!("SUT process still running after {:?}", self.timeout),
                );
            }
        };
        if !status.success() {
            let mut stderr_text = String::new();
            if let Some(mut stderr) = child.stderr.take() {
                let _ = stderr.read_to_string(&mut stderr_text);
            }
            let detail = stderr_text.lines().next().unwrap_or("").trim().to_string();
            return SutResponse::from_error(
                ERROR_KIND_UNAVAILABLE,
                format!("SUT process exited with {status}: {detail}"),
            );
        }

        match stdout_text.lines().find(|line| !line.trim().is_empty()) {
            Some(line) => SutResponse::parse_wire(line),
            None => SutResponse::from_error(ERROR_KIND_MALFORMED, "SUT produced no output line"),
        }
    }
}

impl SutAdapter for CommandAdapter {
    fn invoke(&self, request: &SutRequest) -> SutResponse {
        let mut response = self.invoke_once(request);
        for _ in 0..self.retries {
            let retriable = response
                .error
                .as_ref()
                .is_some_and(|e| e.kind == ERROR_KIND_UNAVAILABLE);
            if !retriable {
                break;
            }
            response = self.invoke_once(request);
        }
        response
    }
}

/// Adapter that POSTs the wire request to a remote endpoint.
pub struct HttpAdapter {
    url: String,
    agent: ureq::Agent,
    retries: u32,
}

impl HttpAdapter {
    pub fn new(url: impl Into<String>, timeout: Duration, retries: u32) -> Self {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        Self {
            url: url.into(),
            agent,
            retries,
        }
    }

    fn invoke_once(&self, request: &SutRequest) -> SutResponse {
        let body = match serde_json::to_value(request) {
            Ok(v) => v,
            Err(err) => {
                return SutResponse::from_error(
                    ERROR_KIND_UNAVAILABLE,
                    format!("cannot serialize request: {err}"),
                )
            }
        };
        match self.agent.post(&self.url).send_json(body) {
            Ok(response) => match response.into_string() {
                Ok(text) => SutResponse::parse_wire(&text),
                Err(err) => SutResponse::from_error(
                    ERROR_KIND_UNAVAILABLE,
                    format!("cannot read SUT response body: {err}"),
                ),
            },
            Err(ureq::Error::Status(code, _)) => SutResponse::from_error(
                ERROR_KIND_UNAVAILABLE,
                format!("SUT endpoint returned HTTP {code}"),
            ),
            Err(ureq::Error::Transport(err)) => {
                SutResponse::from_error(ERROR_KIND_UNAVAILABLE, format!("transport failure: {err}"))
            }
        }
    }
}

impl SutAdapter for HttpAdapter {
    fn invoke(&self, request: &SutRequest) -> SutResponse {
        let mut response = self.invoke_once(request);
        for _ in 0..self.retries {
            let retriable = response
                .error
                .as_ref()
                .is_some_and(|e| e.kind == ERROR_KIND_UNAVAILABLE);
            if !retriable {
                break;
            }
            response = self.invoke_once(request);
        }
        response
    }
}
