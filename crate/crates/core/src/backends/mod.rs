//! Execution backends: candidate code in, structured observation out.
//!
//! The built-in reference backend ([`minilang`]) keeps the whole pipeline
//! hermetic; external toolchains plug in through [`BackendSpec`] command
//! templates plus diagnostic rules, with no per-toolchain code paths.

pub mod minilang;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::io;
use std::path::PathBuf;
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envstore::{Domain, EnvironmentBundle};

/// Closed set of execution outcomes. The declaration order is the fixed
/// tie-break order used wherever a deterministic choice among labels is
/// needed.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum OutcomeLabel {
    Pass,
    #[serde(rename = "Compilation_Error")]
    CompilationError,
    #[serde(rename = "Memory_Fault")]
    MemoryFault,
    #[serde(rename = "Geometry_Error")]
    GeometryError,
    #[serde(rename = "Wrong_Output")]
    WrongOutput,
    Timeout,
    #[serde(rename = "Backend_Unavailable")]
    BackendUnavailable,
}

impl OutcomeLabel {
    pub const ALL: [OutcomeLabel; 7] = [
        OutcomeLabel::Pass,
        OutcomeLabel::CompilationError,
        OutcomeLabel::MemoryFault,
        OutcomeLabel::GeometryError,
        OutcomeLabel::WrongOutput,
        OutcomeLabel::Timeout,
        OutcomeLabel::BackendUnavailable,
    ];

    pub const COUNT: usize = Self::ALL.len();

    pub fn as_str(self) -> &'static str {
        match self {
            OutcomeLabel::Pass => "Pass",
            OutcomeLabel::CompilationError => "Compilation_Error",
            OutcomeLabel::MemoryFault => "Memory_Fault",
            OutcomeLabel::GeometryError => "Geometry_Error",
            OutcomeLabel::WrongOutput => "Wrong_Output",
            OutcomeLabel::Timeout => "Timeout",
            OutcomeLabel::BackendUnavailable => "Backend_Unavailable",
        }
    }

    /// Position in the fixed enum order.
    pub fn index(self) -> usize {
        Self::ALL.iter().position(|l| *l == self).unwrap()
    }

    pub fn from_index(index: usize) -> Option<OutcomeLabel> {
        Self::ALL.get(index).copied()
    }
}

impl fmt::Display for OutcomeLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for OutcomeLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown outcome label `{s}`"))
    }
}

/// Whether an observation came from a real backend or the learned proxy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObservationSource {
    Real,
    Simulated,
}

/// Which kind of oracle drove a trajectory's feedback.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FeedbackSource {
    RealExecution,
    WorldModel,
}

impl FeedbackSource {
    pub fn as_str(self) -> &'static str {
        match self {
            FeedbackSource::RealExecution => "RealExecution",
            FeedbackSource::WorldModel => "WorldModel",
        }
    }
}

/// Structured execution feedback.
///
/// `wall_time_ms` is measured but excluded from equality: two observations
/// compare equal when label, diagnostic, outputs, diff and source match.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Observation {
    pub label: OutcomeLabel,
    pub diagnostic: String,
    pub numeric_outputs: Option<Vec<i64>>,
    pub diff_summary: Option<String>,
    pub wall_time_ms: u64,
    pub source: ObservationSource,
}

impl PartialEq for Observation {
    fn eq(&self, other: &Self) -> bool {
        self.label == other.label
            && self.diagnostic == other.diagnostic
            && self.numeric_outputs == other.numeric_outputs
            && self.diff_summary == other.diff_summary
            && self.source == other.source
    }
}

impl Eq for Observation {}

impl Observation {
    pub fn backend_unavailable(diagnostic: impl Into<String>) -> Self {
        Observation {
            label: OutcomeLabel::BackendUnavailable,
            diagnostic: diagnostic.into(),
            numeric_outputs: None,
            diff_summary: None,
            wall_time_ms: 0,
            source: ObservationSource::Real,
        }
    }
}

/// One ordered diagnostic rule: first substring match wins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiagnosticRule {
    pub pattern: String,
    pub label: OutcomeLabel,
}

/// Adapter descriptor for an execution toolchain.
///
/// `invocation` is a command template with `{workspace}` and `{candidate}`
/// placeholders; it is empty for the built-in reference backend.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BackendSpec {
    pub name: String,
    pub supported_domains: BTreeSet<Domain>,
    pub invocation: Vec<String>,
    pub diagnostic_rules: Vec<DiagnosticRule>,
}

/// Name of the built-in reference backend spec.
pub const REFERENCE_BACKEND: &str = "reference";

impl BackendSpec {
    /// The built-in hermetic backend: reference domain only, no invocation.
    pub fn reference() -> Self {
        BackendSpec {
            name: REFERENCE_BACKEND.to_string(),
            supported_domains: BTreeSet::from([Domain::Reference]),
            invocation: Vec::new(),
            diagnostic_rules: Vec::new(),
        }
    }
}

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend `{name}` is already registered")]
    DuplicateBackend { name: String },

    #[error("diagnostic rule {index} of backend `{name}` has an empty pattern")]
    EmptyRulePattern { name: String, index: usize },

    #[error("workspace failure at {path}: {source}")]
    Workspace {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("duplicate job id `{job_id}` in batch")]
    DuplicateJobId { job_id: String },

    #[error("parallelism must be at least 1")]
    ZeroParallelism,
}

/// Registry of backend specs, at most one per name.
#[derive(Debug, Clone, Default)]
pub struct BackendRegistry {
    specs: BTreeMap<String, BackendSpec>,
}

impl BackendRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Registry holding only the built-in reference backend.
    pub fn builtin() -> Self {
        let mut registry = Self::default();
        registry.register(BackendSpec::reference()).unwrap();
        registry
    }

    pub fn register(&mut self, spec: BackendSpec) -> Result<(), BackendError> {
        if self.specs.contains_key(&spec.name) {
            return Err(BackendError::DuplicateBackend { name: spec.name });
        }
        for (index, rule) in spec.diagnostic_rules.iter().enumerate() {
            if rule.pattern.is_empty() {
                return Err(BackendError::EmptyRulePattern {
                    name: spec.name,
                    index,
                });
            }
        }
        self.specs.insert(spec.name.clone(), spec);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&BackendSpec> {
        self.specs.get(name)
    }
}

/// Normalize raw toolchain output into (label, diagnostic).
///
/// The first rule whose pattern occurs in some line (rules scanned in order)
/// determines the label; the diagnostic is the matched line plus up to three
/// following lines. With no match, exit status 0 is a Pass with an empty
/// diagnostic and any other status a Compilation_Error carrying the last five
/// lines. Pure: same inputs, same result.
pub fn parse_diagnostics(
    raw_output: &str,
    exit_status: i32,
    spec: &BackendSpec,
) -> (OutcomeLabel, String) {
    let lines: Vec<&str> = raw_output.lines().collect();
    for rule in &spec.diagnostic_rules {
        if let Some(idx) = lines.iter().position(|l| l.contains(rule.pattern.as_str())) {
            let end = (idx + 4).min(lines.len());
            return (rule.label, lines[idx..end].join("\n"));
        }
    }
    if exit_status == 0 {
        (OutcomeLabel::Pass, String::new())
    } else {
        let start = lines.len().saturating_sub(5);
        let mut diagnostic = lines[start..].join("\n");
        if diagnostic.trim().is_empty() {
            diagnostic = format!("exit status {exit_status} with no output");
        }
        (OutcomeLabel::CompilationError, diagnostic)
    }
}

/// One unit of batch work.
#[derive(Debug, Clone)]
pub struct ExecutionJob {
    pub job_id: String,
    pub bundle: Arc<EnvironmentBundle>,
    pub code: String,
}

/// An environment that can judge candidate code. Implemented by the real
/// executor and by the learned proxy, so the trajectory loop runs unchanged
/// against either.
pub trait ExecutionOracle: Send + Sync {
    fn evaluate(&self, bundle: &EnvironmentBundle, code: &str) -> Observation;
    fn feedback_source(&self) -> FeedbackSource;
}

/// Executes candidates in isolated workspaces against registered backends.
pub struct RealExecutor {
    registry: BackendRegistry,
    workspace_trace: Option<Mutex<Vec<PathBuf>>>,
}

impl RealExecutor {
    pub fn new(registry: BackendRegistry) -> Self {
        RealExecutor {
            registry,
            workspace_trace: None,
        }
    }

    /// Executor over the builtin registry (reference backend only).
    pub fn builtin() -> Self {
        Self::new(BackendRegistry::builtin())
    }

    pub fn registry(&self) -> &BackendRegistry {
        &self.registry
    }

    /// Record every workspace path used; `take_workspace_trace` drains them.
    pub fn with_workspace_trace(mut self) -> Self {
        self.workspace_trace = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn take_workspace_trace(&self) -> Vec<PathBuf> {
        self.workspace_trace
            .as_ref()
            .map(|t| std::mem::take(&mut *t.lock().unwrap()))
            .unwrap_or_default()
    }

    fn record_workspace(&self, path: &std::path::Path) {
        if let Some(trace) = &self.workspace_trace {
            trace.lock().unwrap().push(path.to_path_buf());
        }
    }

    /// Execute one candidate under the bundle's toolchain.
    ///
    /// Absent toolchains and failed invocations come back as
    /// Backend_Unavailable observations; only workspace setup failures are
    /// errors.
    pub fn execute(
        &self,
        bundle: &EnvironmentBundle,
        code: &str,
    ) -> Result<Observation, BackendError> {
        let started = Instant::now();
        let spec = match self.registry.get(&bundle.toolchain) {
            Some(spec) => spec,
            None => {
                return Ok(Observation::backend_unavailable(format!(
                    "toolchain `{}` is not registered",
                    bundle.toolchain
                )))
            }
        };

        let workspace = tempfile::Builder::new()
            .prefix("trajforge-ws-")
            .tempdir()
            .map_err(|source| BackendError::Workspace {
                path: std::env::temp_dir(),
                source,
            })?;
        self.record_workspace(workspace.path());

        for (rel, content) in &bundle.artifacts {
            let path = workspace.path().join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|source| BackendError::Workspace {
                    path: parent.to_path_buf(),
                    source,
                })?;
            }
            fs::write(&path, content).map_err(|source| BackendError::Workspace {
                path: path.clone(),
                source,
            })?;
        }
        let candidate = workspace
            .path()
            .join(format!("candidate.{}", bundle.domain.candidate_extension()));
        fs::write(&candidate, code).map_err(|source| BackendError::Workspace {
            path: candidate.clone(),
            source,
        })?;

        let mut observation = if spec.invocation.is_empty() {
            minilang::run(bundle, code)
        } else {
            run_external(spec, workspace.path(), &candidate)
        };
        observation.wall_time_ms = started.elapsed().as_millis() as u64;
        Ok(observation)
    }

    /// Execute a batch on a bounded worker pool. The output is index-aligned
    /// with the input regardless of completion order; per-job failures become
    /// Backend_Unavailable observations and never abort the batch.
    pub fn execute_batch(
        &self,
        jobs: &[ExecutionJob],
        parallelism: usize,
    ) -> Result<Vec<Observation>, BackendError> {
        if parallelism == 0 {
            return Err(BackendError::ZeroParallelism);
        }
        let mut seen = BTreeSet::new();
        for job in jobs {
            if !seen.insert(job.job_id.as_str()) {
                return Err(BackendError::DuplicateJobId {
                    job_id: job.job_id.clone(),
                });
            }
        }

        let next = AtomicUsize::new(0);
        let slots: Vec<Mutex<Option<Observation>>> =
            jobs.iter().map(|_| Mutex::new(None)).collect();
        let workers = parallelism.min(jobs.len());
        thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= jobs.len() {
                        break;
                    }
                    let job = &jobs[i];
                    let observation = self
                        .execute(&job.bundle, &job.code)
                        .unwrap_or_else(|e| {
                            Observation::backend_unavailable(format!("workspace failure: {e}"))
                        });
                    *slots[i].lock().unwrap() = Some(observation);
                });
            }
        });
        Ok(slots
            .into_iter()
            .map(|slot| slot.into_inner().unwrap().expect("worker filled every slot"))
            .collect())
    }
}

impl ExecutionOracle for RealExecutor {
    fn evaluate(&self, bundle: &EnvironmentBundle, code: &str) -> Observation {
        self.execute(bundle, code)
            .unwrap_or_else(|e| Observation::backend_unavailable(format!("workspace failure: {e}")))
    }

    fn feedback_source(&self) -> FeedbackSource {
        FeedbackSource::RealExecution
    }
}

/// Execute the reference backend directly (no workspace, no registry).
pub fn execute_reference(bundle: &EnvironmentBundle, code: &str) -> Observation {
    let started = Instant::now();
    let mut observation = minilang::run(bundle, code);
    observation.wall_time_ms = started.elapsed().as_millis() as u64;
    observation
}

fn run_external(
    spec: &BackendSpec,
    workspace: &std::path::Path,
    candidate: &std::path::Path,
) -> Observation {
    let argv: Vec<String> = spec
        .invocation
        .iter()
        .map(|part| {
            part.replace("{workspace}", &workspace.to_string_lossy())
                .replace("{candidate}", &candidate.to_string_lossy())
        })
        .collect();

    let output = Command::new(&argv[0])
        .args(&argv[1..])
        .current_dir(workspace)
        .output();
    match output {
        Err(e) => Observation::backend_unavailable(format!(
            "failed to invoke `{}`: {e}",
            argv[0]
        )),
        Ok(output) => {
            let mut raw = String::from_utf8_lossy(&output.stdout).into_owned();
            let stderr = String::from_utf8_lossy(&output.stderr);
            if !stderr.is_empty() {
                if !raw.is_empty() && !raw.ends_with('\n') {
                    raw.push('\n');
                }
                raw.push_str(&stderr);
            }
            let exit_status = output.status.code().unwrap_or(-1);
            let (label, diagnostic) = parse_diagnostics(&raw, exit_status, spec);
            Observation {
                label,
                diagnostic,
                numeric_outputs: None,
                diff_summary: None,
                wall_time_ms: 0,
                source: ObservationSource::Real,
            }
        }
    }
}
