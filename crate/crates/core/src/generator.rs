//! Generators produce (reasoning, code) pairs from the task state and prior
//! feedback.
//!
//! Hermetic tests use [`ScriptedGenerator`], a pure table lookup keyed by
//! (seed id, last outcome label, turn index). Production campaigns use
//! [`RemoteGenerator`], a minimal chat-completion-style client.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{Observation, OutcomeLabel};
use crate::envstore::{DomainInstructions, TaskSeed};

/// One proposed turn: reasoning trace plus candidate code.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratorTurnOutput {
    pub reasoning: String,
    pub code: String,
}

/// A completed prior turn as seen by the generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PriorTurn {
    pub reasoning: String,
    pub code: String,
    pub observation: Observation,
}

/// Everything the generator may condition on at one turn.
#[derive(Debug, Clone)]
pub struct GeneratorContext {
    pub instructions: DomainInstructions,
    pub seed: TaskSeed,
    /// Turns 0..k-1, oldest first.
    pub history: Vec<PriorTurn>,
}

impl GeneratorContext {
    pub fn turn_index(&self) -> usize {
        self.history.len()
    }

    pub fn last_label(&self) -> Option<OutcomeLabel> {
        self.history.last().map(|t| t.observation.label)
    }
}

#[derive(Debug, Error)]
pub enum GeneratorError {
    #[error("generator endpoint unavailable: {0}")]
    GeneratorUnavailable(String),

    #[error("scripted policy has no entry for (seed `{seed_id}`, prior {prior}, turn {turn_index})",
            prior = prior_label.map(OutcomeLabel::as_str).unwrap_or("-"))]
    ScriptExhausted {
        seed_id: String,
        prior_label: Option<OutcomeLabel>,
        turn_index: usize,
    },
}

/// Produces the next (reasoning, code) pair for one trajectory.
pub trait Generator: Send {
    fn propose(&mut self, context: &GeneratorContext) -> Result<GeneratorTurnOutput, GeneratorError>;
}

/// Hands out one independent generator per trajectory.
pub trait GeneratorFactory: Send + Sync {
    fn instance(&self, seed: &TaskSeed) -> Box<dyn Generator>;
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("policy line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

type PolicyKey = (String, Option<OutcomeLabel>, usize);

/// Deterministic response table: (seed id, prior label, turn index) -> turn.
#[derive(Debug, Clone, Default)]
pub struct ScriptedPolicy {
    entries: BTreeMap<PolicyKey, GeneratorTurnOutput>,
}

impl ScriptedPolicy {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(
        &mut self,
        seed_id: impl Into<String>,
        prior_label: Option<OutcomeLabel>,
        turn_index: usize,
        reasoning: impl Into<String>,
        code: impl Into<String>,
    ) -> &mut Self {
        self.entries.insert(
            (seed_id.into(), prior_label, turn_index),
            GeneratorTurnOutput {
                reasoning: reasoning.into(),
                code: code.into(),
            },
        );
        self
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Load a policy file: `seed_id | prior_label_or_DASH | turn_index |
    /// reasoning_file | code_file`, one entry per line, `#` comments.
    /// File paths are resolved relative to the policy file's directory.
    pub fn from_file(path: &Path) -> Result<Self, PolicyError> {
        let text = fs::read_to_string(path).map_err(|source| PolicyError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let mut policy = ScriptedPolicy::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('|').map(str::trim).collect();
            if fields.len() != 5 {
                return Err(PolicyError::Parse {
                    line: line_no,
                    message: format!("expected 5 `|`-separated fields, got {}", fields.len()),
                });
            }
            let prior_label = match fields[1] {
                "-" => None,
                label => Some(label.parse::<OutcomeLabel>().map_err(|m| PolicyError::Parse {
                    line: line_no,
                    message: m,
                })?),
            };
            let turn_index = fields[2].parse::<usize>().map_err(|_| PolicyError::Parse {
                line: line_no,
                message: format!("invalid turn index `{}`", fields[2]),
            })?;
            let read = |rel: &str| {
                let file = base.join(rel);
                fs::read_to_string(&file).map_err(|source| PolicyError::Io { path: file, source })
            };
            policy.insert(fields[0], prior_label, turn_index, read(fields[3])?, read(fields[4])?);
        }
        Ok(policy)
    }

    fn lookup(&self, key: &PolicyKey) -> Option<&GeneratorTurnOutput> {
        self.entries.get(key)
    }
}

impl GeneratorFactory for ScriptedPolicy {
    fn instance(&self, _seed: &TaskSeed) -> Box<dyn Generator> {
        Box::new(ScriptedGenerator {
            policy: self.clone(),
        })
    }
}

/// Pure function of (seed id, last observation label, turn index).
#[derive(Debug, Clone)]
pub struct ScriptedGenerator {
    policy: ScriptedPolicy,
}

impl ScriptedGenerator {
    pub fn new(policy: ScriptedPolicy) -> Self {
        ScriptedGenerator { policy }
    }
}

impl Generator for ScriptedGenerator {
    fn propose(&mut self, context: &GeneratorContext) -> Result<GeneratorTurnOutput, GeneratorError> {
        let key = (
            context.seed.seed_id.clone(),
            context.last_label(),
            context.turn_index(),
        );
        self.policy
            .lookup(&key)
            .cloned()
            .ok_or(GeneratorError::ScriptExhausted {
                seed_id: key.0,
                prior_label: key.1,
                turn_index: key.2,
            })
    }
}

/// Wraps a generator and records every context it was asked to extend.
pub struct RecordingGenerator {
    inner: Box<dyn Generator>,
    log: Arc<Mutex<Vec<GeneratorContext>>>,
}

impl RecordingGenerator {
    pub fn new(inner: Box<dyn Generator>) -> Self {
        RecordingGenerator {
            inner,
            log: Arc::new(Mutex::new(Vec::new())),
        }
    }

    pub fn log_handle(&self) -> Arc<Mutex<Vec<GeneratorContext>>> {
        Arc::clone(&self.log)
    }
}

impl Generator for RecordingGenerator {
    fn propose(&mut self, context: &GeneratorContext) -> Result<GeneratorTurnOutput, GeneratorError> {
        self.log.lock().unwrap().push(context.clone());
        self.inner.propose(context)
    }
}

/// Factory wrapper that records contexts across a whole campaign.
pub struct RecordingFactory {
    inner: Arc<dyn GeneratorFactory>,
    log: Arc<Mutex<Vec<GeneratorContext>>>,
}

impl RecordingFactory {
    pub fn new(inner: Arc<dyn GeneratorFactory>) -> Self {
        RecordingFactory {
            inner,
            log: Arc::new(Mutex::new(Vec::new())),
        }
    }

    pub fn log_handle(&self) -> Arc<Mutex<Vec<GeneratorContext>>> {
        Arc::clone(&self.log)
    }
}

impl GeneratorFactory for RecordingFactory {
    fn instance(&self, seed: &TaskSeed) -> Box<dyn Generator> {
        Box::new(RecordingGenerator {
            inner: self.inner.instance(seed),
            log: Arc::clone(&self.log),
        })
    }
}

const THINK_OPEN: &str = "<think>";
const THINK_CLOSE: &str = "</think>";
const CODE_FENCE: &str = "```";

/// How many additional attempts a remote exchange gets before giving up.
const REMOTE_RETRIES: usize = 2;

#[derive(Serialize)]
struct ChatMessage {
    role: &'static str,
    content: String,
}

#[derive(Serialize)]
struct ChatRequest {
    messages: Vec<ChatMessage>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatResponseMessage,
}

#[derive(Deserialize)]
struct ChatResponseMessage {
    content: String,
}

/// Minimal chat-completion-style client. The reasoning trace is expected
/// inside a `<think>` block and the code inside a fenced block; a response
/// that parses as neither is retried (max 2) and then reported as
/// GeneratorUnavailable.
pub struct RemoteGenerator {
    url: String,
    token: Option<String>,
    agent: ureq::Agent,
}

impl RemoteGenerator {
    pub fn new(url: impl Into<String>, token: Option<String>) -> Self {
        RemoteGenerator {
            url: url.into(),
            token,
            agent: ureq::AgentBuilder::new()
                .timeout(Duration::from_secs(30))
                .build(),
        }
    }

    /// Request body for one context. Every prior diagnostic is embedded
    /// verbatim in a user message.
    pub fn request_body(context: &GeneratorContext) -> String {
        let mut messages = vec![
            ChatMessage {
                role: "system",
                content: context.instructions.instruction_text.clone(),
            },
            ChatMessage {
                role: "user",
                content: format!(
                    "Task: {}\nRequired interface: {}",
                    context.seed.description, context.seed.expected_interface
                ),
            },
        ];
        for turn in &context.history {
            messages.push(ChatMessage {
                role: "assistant",
                content: format!(
                    "{THINK_OPEN}\n{}\n{THINK_CLOSE}\n{CODE_FENCE}\n{}\n{CODE_FENCE}",
                    turn.reasoning, turn.code
                ),
            });
            messages.push(ChatMessage {
                role: "user",
                content: format!(
                    "Execution feedback ({}): {}",
                    turn.observation.label, turn.observation.diagnostic
                ),
            });
        }
        serde_json::to_string(&ChatRequest { messages }).expect("chat request serializes")
    }

    fn parse_content(content: &str) -> Option<GeneratorTurnOutput> {
        let think_start = content.find(THINK_OPEN)? + THINK_OPEN.len();
        let think_end = content[think_start..].find(THINK_CLOSE)? + think_start;
        let reasoning = content[think_start..think_end].trim().to_string();

        let after = &content[think_end + THINK_CLOSE.len()..];
        let fence_start = after.find(CODE_FENCE)? + CODE_FENCE.len();
        let body_full = &after[fence_start..];
        // Drop an optional language tag on the opening fence line.
        let body = match body_full.split_once('\n') {
            Some((tag, rest)) if tag.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '-') => {
                rest
            }
            _ => body_full,
        };
        let fence_end = body.find(CODE_FENCE)?;
        let code = body[..fence_end].trim_matches('\n').to_string();
        if code.is_empty() {
            return None;
        }
        Some(GeneratorTurnOutput { reasoning, code })
    }

    fn exchange(&self, body: &str) -> Result<GeneratorTurnOutput, String> {
        let mut request = self
            .agent
            .post(&self.url)
            .set("content-type", "application/json");
        if let Some(token) = &self.token {
            request = request.set("authorization", &format!("Bearer {token}"));
        }
        let response = request.send_string(body).map_err(|e| e.to_string())?;
        let text = response.into_string().map_err(|e| e.to_string())?;
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| format!("bad response json: {e}"))?;
        let content = &parsed
            .choices
            .first()
            .ok_or_else(|| "response has no choices".to_string())?
            .message
            .content;
        Self::parse_content(content)
            .ok_or_else(|| "response content has no <think> block or code fence".to_string())
    }
}

impl Generator for RemoteGenerator {
    fn propose(&mut self, context: &GeneratorContext) -> Result<GeneratorTurnOutput, GeneratorError> {
        let body = Self::request_body(context);
        let mut last_error = String::new();
        for _ in 0..=REMOTE_RETRIES {
            match self.exchange(&body) {
                Ok(output) => return Ok(output),
                Err(e) => last_error = e,
            }
        }
        Err(GeneratorError::GeneratorUnavailable(last_error))
    }
}

/// Factory for remote generators sharing one endpoint configuration.
pub struct RemoteFactory {
    url: String,
    token: Option<String>,
}

impl RemoteFactory {
    pub fn new(url: impl Into<String>, token: Option<String>) -> Self {
        RemoteFactory {
            url: url.into(),
            token,
        }
    }
}

impl GeneratorFactory for RemoteFactory {
    fn instance(&self, _seed: &TaskSeed) -> Box<dyn Generator> {
        Box::new(RemoteGenerator::new(self.url.clone(), self.token.clone()))
    }
}
