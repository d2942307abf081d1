//! Task seeds, environment bundles, and domain prompt routing.
//!
//! An environment bundle is the reproducible execution context for a task:
//! its artifacts (testbenches, headers, test specifications), the toolchain
//! that runs candidates against it, and resource limits. Bundles are immutable
//! after load and safe to share across concurrent trajectory tasks.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backends::BackendRegistry;

/// Task domain. The set is closed; each domain routes to its own generator
/// instructions and candidate file extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    GpuKernel,
    ChipDesign,
    Embedded,
    CodeOpt,
    Cad,
    Reference,
}

impl Domain {
    pub const ALL: [Domain; 6] = [
        Domain::GpuKernel,
        Domain::ChipDesign,
        Domain::Embedded,
        Domain::CodeOpt,
        Domain::Cad,
        Domain::Reference,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::GpuKernel => "gpu_kernel",
            Domain::ChipDesign => "chip_design",
            Domain::Embedded => "embedded",
            Domain::CodeOpt => "code_opt",
            Domain::Cad => "cad",
            Domain::Reference => "reference",
        }
    }

    /// Extension of the candidate file written into an execution workspace.
    pub fn candidate_extension(self) -> &'static str {
        match self {
            Domain::GpuKernel => "py",
            Domain::ChipDesign => "v",
            Domain::Embedded => "c",
            Domain::CodeOpt => "s",
            Domain::Cad => "py",
            Domain::Reference => "mini",
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Domain::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown domain `{s}`"))
    }
}

/// A programming task to solve, paired with a bundle at campaign time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSeed {
    pub seed_id: String,
    pub domain: Domain,
    pub description: String,
    pub expected_interface: String,
}

/// Per-execution resource limits. All three must be strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResourceLimits {
    pub memory_budget: u64,
    pub step_limit: u64,
    pub wall_time_ms: u64,
}

/// Reproducible execution context: artifacts, toolchain, limits, digest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvironmentBundle {
    pub bundle_id: String,
    pub domain: Domain,
    /// Relative artifact path -> content. Sorted so the digest is canonical.
    pub artifacts: BTreeMap<String, Vec<u8>>,
    /// Name of the BackendSpec that executes candidates for this bundle.
    pub toolchain: String,
    pub resource_limits: ResourceLimits,
    pub content_digest: String,
}

/// Errors from loading or constructing bundles.
#[derive(Debug, Error)]
pub enum BundleError {
    #[error("missing manifest: {path}")]
    MissingManifest { path: PathBuf },

    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },

    #[error("manifest is missing required key `{key}`")]
    ManifestMissingKey { key: String },

    #[error("missing artifact: {path}")]
    MissingArtifact { path: String },

    #[error("unsafe artifact path: {path}")]
    InvalidArtifactPath { path: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Name of the manifest file inside a bundle directory.
pub const MANIFEST_FILE: &str = "bundle.manifest";

/// Rejects absolute paths, parent traversal, and empty components.
fn check_artifact_path(path: &str) -> Result<(), BundleError> {
    let bad = path.is_empty()
        || path.starts_with('/')
        || path.contains('\\')
        || path.contains(':')
        || path.split('/').any(|c| c.is_empty() || c == "." || c == "..");
    if bad {
        return Err(BundleError::InvalidArtifactPath {
            path: path.to_string(),
        });
    }
    Ok(())
}

/// 256-bit digest over the canonical bundle serialization: artifact paths in
/// lexicographic order, each contributing path bytes plus length-prefixed
/// content, followed by the three limits as decimal text.
pub fn content_digest(artifacts: &BTreeMap<String, Vec<u8>>, limits: &ResourceLimits) -> String {
    let mut hasher = Sha256::new();
    for (path, content) in artifacts {
        hasher.update(path.as_bytes());
        hasher.update((content.len() as u64).to_be_bytes());
        hasher.update(content);
    }
    hasher.update(
        format!(
            "{} {} {}",
            limits.memory_budget, limits.step_limit, limits.wall_time_ms
        )
        .as_bytes(),
    );
    hex::encode(hasher.finalize())
}

impl EnvironmentBundle {
    /// Build a bundle in memory, validating artifact paths and computing the
    /// content digest.
    pub fn from_parts(
        bundle_id: impl Into<String>,
        domain: Domain,
        toolchain: impl Into<String>,
        artifacts: BTreeMap<String, Vec<u8>>,
        resource_limits: ResourceLimits,
    ) -> Result<Self, BundleError> {
        for path in artifacts.keys() {
            check_artifact_path(path)?;
        }
        let content_digest = content_digest(&artifacts, &resource_limits);
        Ok(EnvironmentBundle {
            bundle_id: bundle_id.into(),
            domain,
            artifacts,
            toolchain: toolchain.into(),
            resource_limits,
            content_digest,
        })
    }

    pub fn artifact(&self, path: &str) -> Option<&[u8]> {
        self.artifacts.get(path).map(Vec::as_slice)
    }

    pub fn recompute_digest(&self) -> String {
        content_digest(&self.artifacts, &self.resource_limits)
    }

    /// Canonical manifest serialization; reloading it yields the same digest.
    pub fn manifest_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("bundle_id = {}\n", self.bundle_id));
        out.push_str(&format!("domain = {}\n", self.domain));
        out.push_str(&format!("toolchain = {}\n", self.toolchain));
        out.push_str(&format!(
            "memory_budget = {}\n",
            self.resource_limits.memory_budget
        ));
        out.push_str(&format!("step_limit = {}\n", self.resource_limits.step_limit));
        out.push_str(&format!(
            "wall_time_ms = {}\n",
            self.resource_limits.wall_time_ms
        ));
        for path in self.artifacts.keys() {
            out.push_str(&format!("artifact = {path}\n"));
        }
        out
    }

    /// Write manifest plus artifacts under `dir`, creating it if needed.
    pub fn write_to_dir(&self, dir: &Path) -> Result<(), BundleError> {
        let io_err = |path: &Path, source| BundleError::Io {
            path: path.to_path_buf(),
            source,
        };
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let manifest_path = dir.join(MANIFEST_FILE);
        fs::write(&manifest_path, self.manifest_text()).map_err(|e| io_err(&manifest_path, e))?;
        for (rel, content) in &self.artifacts {
            let path = dir.join(rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
            }
            fs::write(&path, content).map_err(|e| io_err(&path, e))?;
        }
        Ok(())
    }
}

struct ManifestFields {
    bundle_id: Option<String>,
    domain: Option<Domain>,
    toolchain: Option<String>,
    memory_budget: Option<u64>,
    step_limit: Option<u64>,
    wall_time_ms: Option<u64>,
    artifact_paths: Vec<String>,
}

fn parse_manifest(text: &str) -> Result<ManifestFields, BundleError> {
    let mut fields = ManifestFields {
        bundle_id: None,
        domain: None,
        toolchain: None,
        memory_budget: None,
        step_limit: None,
        wall_time_ms: None,
        artifact_paths: Vec::new(),
    };
    let err = |line: usize, message: String| BundleError::Manifest { line, message };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(line_no, format!("expected `key = value`, got `{line}`")))?;
        let key = key.trim();
        let value = value.trim();

        let parse_u64 = |value: &str| {
            value
                .parse::<u64>()
                .map_err(|_| err(line_no, format!("`{key}` must be an unsigned integer, got `{value}`")))
        };
        let set_once = |slot: &mut Option<String>| {
            if slot.is_some() {
                return Err(err(line_no, format!("duplicate key `{key}`")));
            }
            *slot = Some(value.to_string());
            Ok(())
        };

        match key {
            "bundle_id" => set_once(&mut fields.bundle_id)?,
            "toolchain" => set_once(&mut fields.toolchain)?,
            "domain" => {
                if fields.domain.is_some() {
                    return Err(err(line_no, "duplicate key `domain`".to_string()));
                }
                fields.domain =
                    Some(value.parse::<Domain>().map_err(|m| err(line_no, m))?);
            }
            "memory_budget" =>fields_set_u64(&mut fields.memory_budget, parse_u64(value)?, key, line_no)?,
            "step_limit" => fields_set_u64(&mut fields.step_limit, parse_u64(value)?, key, line_no)?,
            "wall_time_ms" => fields_set_u64(&mut fields.wall_time_ms, parse_u64(value)?, key, line_no)?,
            "artifact" => {
                check_artifact_path(value).map_err(|_| {
                    err(line_no, format!("unsafe artifact path `{value}`"))
                })?;
                if fields.artifact_paths.iter().any(|p| p == value) {
                    return Err(err(line_no, format!("duplicate artifact `{value}`")));
                }
                fields.artifact_paths.push(value.to_string());
            }
            other => return Err(err(line_no, format!("unknown key `{other}`"))),
        }
    }
    Ok(fields)
}

fn fields_set_u64(
    slot: &mut Option<u64>,
    value: u64,
    key: &str,
    line: usize,
) -> Result<(), BundleError> {
    if slot.is_some() {
        return Err(BundleError::Manifest {
            line,
            message: format!("duplicate key `{key}`"),
        });
    }
    *slot = Some(value);
    Ok(())
}

fn required<T>(value: Option<T>, key: &str) -> Result<T, BundleError> {
    value.ok_or_else(|| BundleError::ManifestMissingKey {
        key: key.to_string(),
    })
}

/// Load a bundle from a directory containing `bundle.manifest` plus the
/// artifacts it lists. Files not named in the manifest are ignored.
pub fn load_bundle(root_path: &Path) -> Result<EnvironmentBundle, BundleError> {
    let manifest_path = root_path.join(MANIFEST_FILE);
    let text = match fs::read_to_string(&manifest_path) {
        Ok(text) => text,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(BundleError::MissingManifest {
                path: manifest_path,
            })
        }
        Err(e) => {
            return Err(BundleError::Io {
                path: manifest_path,
                source: e,
            })
        }
    };
    let fields = parse_manifest(&text)?;

    let mut artifacts = BTreeMap::new();
    for rel in &fields.artifact_paths {
        let path = root_path.join(rel);
        let content = match fs::read(&path) {
            Ok(content) => content,
            Err(e) if e.kind() == io::ErrorKind::NotFound => {
                return Err(BundleError::MissingArtifact { path: rel.clone() })
            }
            Err(e) => return Err(BundleError::Io { path, source: e }),
        };
        artifacts.insert(rel.clone(), content);
    }

    let limits = ResourceLimits {
        memory_budget: required(fields.memory_budget, "memory_budget")?,
        step_limit: required(fields.step_limit, "step_limit")?,
        wall_time_ms: required(fields.wall_time_ms, "wall_time_ms")?,
    };
    EnvironmentBundle::from_parts(
        required(fields.bundle_id, "bundle_id")?,
        required(fields.domain, "domain")?,
        required(fields.toolchain, "toolchain")?,
        artifacts,
        limits,
    )
}

/// Check every bundle invariant plus toolchain/domain support against the
/// registry. Violations are returned as human-readable strings, not thrown.
pub fn validate_bundle(bundle: &EnvironmentBundle, registry: &BackendRegistry) -> Vec<String> {
    let mut violations = Vec::new();
    if bundle.bundle_id.is_empty() {
        violations.push("bundle_id must be non-empty".to_string());
    }
    for path in bundle.artifacts.keys() {
        if check_artifact_path(path).is_err() {
            violations.push(format!("artifact path `{path}` is unsafe"));
        }
    }
    let limits = &bundle.resource_limits;
    for (name, value) in [
        ("memory_budget", limits.memory_budget),
        ("step_limit", limits.step_limit),
        ("wall_time_ms", limits.wall_time_ms),
    ] {
        if value == 0 {
            violations.push(format!("resource_limits.{name} must be strictly positive"));
        }
    }
    let recomputed = bundle.recompute_digest();
    if recomputed != bundle.content_digest {
        violations.push(format!(
            "content_digest mismatch: stored {} but canonical serialization hashes to {}",
            bundle.content_digest, recomputed
        ));
    }
    match registry.get(&bundle.toolchain) {
        None => violations.push(format!(
            "toolchain `{}` is not a registered backend",
            bundle.toolchain
        )),
        Some(spec) => {
            if !spec.supported_domains.contains(&bundle.domain) {
                violations.push(format!(
                    "domain `{}` is not supported by toolchain `{}`",
                    bundle.domain, bundle.toolchain
                ));
            }
        }
    }
    violations
}

/// Instruction text prepended to generator prompts for one domain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainInstructions {
    pub domain: Domain,
    pub instruction_text: String,
}

#[derive(Debug, Error)]
pub enum RouteError {
    #[error("no instructions available for domain `{domain}`")]
    UnsupportedDomain { domain: Domain },
}

/// Per-domain instruction texts. The builtin set ships the defaults compiled
/// in from `resources/instructions/`; `from_dir` loads edited copies.
#[derive(Debug, Clone)]
pub struct InstructionSet {
    texts: BTreeMap<Domain, String>,
}

impl InstructionSet {
    pub fn builtin() -> Self {
        let mut texts = BTreeMap::new();
        texts.insert(
            Domain::GpuKernel,
            include_str!("../resources/instructions/gpu_kernel.txt").to_string(),
        );
        texts.insert(
            Domain::ChipDesign,
            include_str!("../resources/instructions/chip_design.txt").to_string(),
        );
        texts.insert(
            Domain::Embedded,
            include_str!("../resources/instructions/embedded.txt").to_string(),
        );
        texts.insert(
            Domain::CodeOpt,
            include_str!("../resources/instructions/code_opt.txt").to_string(),
        );
        texts.insert(
            Domain::Cad,
            include_str!("../resources/instructions/cad.txt").to_string(),
        );
        texts.insert(
            Domain::Reference,
            include_str!("../resources/instructions/reference.txt").to_string(),
        );
        InstructionSet { texts }
    }

    /// Load `<domain>.txt` files from a directory. Missing or empty files
    /// leave the domain unrouteable.
    pub fn from_dir(dir: &Path) -> Result<Self, io::Error> {
        let mut texts = BTreeMap::new();
        for domain in Domain::ALL {
            let path = dir.join(format!("{domain}.txt"));
            match fs::read_to_string(&path) {
                Ok(text) if !text.trim().is_empty() => {
                    texts.insert(domain, text);
                }
                Ok(_) => {}
                Err(e) if e.kind() == io::ErrorKind::NotFound => {}
                Err(e) => return Err(e),
            }
        }
        Ok(InstructionSet { texts })
    }

    /// Deterministic routing: instructions depend only on `bundle.domain`.
    pub fn route(&self, bundle: &EnvironmentBundle) -> Result<DomainInstructions, RouteError> {
        let text = self
            .texts
            .get(&bundle.domain)
            .filter(|t| !t.trim().is_empty())
            .ok_or(RouteError::UnsupportedDomain {
                domain: bundle.domain,
            })?;
        Ok(DomainInstructions {
            domain: bundle.domain,
            instruction_text: text.clone(),
        })
    }
}

/// Route with the builtin instruction set.
pub fn route_prompt(bundle: &EnvironmentBundle) -> Result<DomainInstructions, RouteError> {
    InstructionSet::builtin().route(bundle)
}

/// Lookup table over loaded bundles, keyed by content digest and bundle id.
#[derive(Debug, Default, Clone)]
pub struct BundleIndex {
    by_digest: BTreeMap<String, Arc<EnvironmentBundle>>,
    by_id: BTreeMap<String, Arc<EnvironmentBundle>>,
}

#[derive(Debug, Error)]
pub enum BundleIndexError {
    #[error("duplicate bundle id `{bundle_id}`")]
    DuplicateId { bundle_id: String },

    #[error(transparent)]
    Bundle(#[from] BundleError),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl BundleIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, bundle: EnvironmentBundle) -> Result<(), BundleIndexError> {
        if self.by_id.contains_key(&bundle.bundle_id) {
            return Err(BundleIndexError::DuplicateId {
                bundle_id: bundle.bundle_id,
            });
        }
        let bundle = Arc::new(bundle);
        self.by_digest
            .insert(bundle.content_digest.clone(), Arc::clone(&bundle));
        self.by_id.insert(bundle.bundle_id.clone(), bundle);
        Ok(())
    }

    /// Load every subdirectory of `dir` that contains a manifest.
    pub fn load_dir(dir: &Path) -> Result<Self, BundleIndexError> {
        let mut index = BundleIndex::new();
        let entries = fs::read_dir(dir).map_err(|e| BundleIndexError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let mut roots: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join(MANIFEST_FILE).is_file())
            .collect();
        roots.sort();
        for root in roots {
            index.insert(load_bundle(&root)?)?;
        }
        Ok(index)
    }

    pub fn by_digest(&self, digest: &str) -> Option<&Arc<EnvironmentBundle>> {
        self.by_digest.get(digest)
    }

    pub fn by_id(&self, bundle_id: &str) -> Option<&Arc<EnvironmentBundle>> {
        self.by_id.get(bundle_id)
    }

    pub fn len(&self) -> usize {
        self.by_id.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_id.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<EnvironmentBundle>> {
        self.by_id.values()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::BackendRegistry;

    fn limits() -> ResourceLimits {
        ResourceLimits {
            memory_budget: 8,
            step_limit: 100,
            wall_time_ms: 1000,
        }
    }

    fn sample_bundle() -> EnvironmentBundle {
        let mut artifacts = BTreeMap::new();
        artifacts.insert("tests.expected".to_string(), b"5\n".to_vec());
        artifacts.insert("task.txt".to_string(), b"add two numbers\n".to_vec());
        EnvironmentBundle::from_parts("ref-add-001", Domain::Reference, "reference", artifacts, limits())
            .unwrap()
    }

    #[test]
    fn digest_is_stable_across_two_loads() {
        let dir = tempfile::tempdir().unwrap();
        sample_bundle().write_to_dir(dir.path()).unwrap();
        let a = load_bundle(dir.path()).unwrap();
        let b = load_bundle(dir.path()).unwrap();
        assert_eq!(a.content_digest, b.content_digest);
        assert_eq!(a.artifacts.len(), 2);
    }

    #[test]
    fn manifest_roundtrip_preserves_digest() {
        let bundle = sample_bundle();
        let dir = tempfile::tempdir().unwrap();
        bundle.write_to_dir(dir.path()).unwrap();
        let loaded = load_bundle(dir.path()).unwrap();
        assert_eq!(loaded.content_digest, bundle.content_digest);

        // Re-serialize the loaded bundle and load it a second time.
        let dir2 = tempfile::tempdir().unwrap();
        loaded.write_to_dir(dir2.path()).unwrap();
        let reloaded = load_bundle(dir2.path()).unwrap();
        assert_eq!(reloaded.content_digest, bundle.content_digest);
    }

    #[test]
    fn traversal_path_is_rejected_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = "bundle_id = evil\ndomain = reference\ntoolchain = reference\n\
                        memory_budget = 8\nstep_limit = 100\nwall_time_ms = 1000\n\
                        artifact = ../escape.v\n";
        fs::write(dir.path().join(MANIFEST_FILE), manifest).unwrap();
        match load_bundle(dir.path()) {
            Err(BundleError::Manifest { line, message }) => {
                assert_eq!(line, 7);
                assert!(message.contains("../escape.v"), "{message}");
            }
            other => panic!("expected manifest error, got {other:?}"),
        }
    }

    #[test]
    fn missing_manifest_and_missing_artifact() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_bundle(dir.path()),
            Err(BundleError::MissingManifest { .. })
        ));

        let manifest = "bundle_id = b\ndomain = reference\ntoolchain = reference\n\
                        memory_budget = 8\nstep_limit = 100\nwall_time_ms = 1000\n\
                        artifact = ghost.txt\n";
        fs::write(dir.path().join(MANIFEST_FILE), manifest).unwrap();
        match load_bundle(dir.path()) {
            Err(BundleError::MissingArtifact { path }) => assert_eq!(path, "ghost.txt"),
            other => panic!("expected missing artifact, got {other:?}"),
        }
    }

    #[test]
    fn unknown_key_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = "bundle_id = b\nfrobnicate = yes\n";
        fs::write(dir.path().join(MANIFEST_FILE), manifest).unwrap();
        match load_bundle(dir.path()) {
            Err(BundleError::Manifest { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("unknown key"), "{message}");
            }
            other => panic!("expected manifest error, got {other:?}"),
        }
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = "# fixture\n\nbundle_id = b\ndomain = reference\ntoolchain = reference\n\
                        memory_budget = 8\nstep_limit = 100\nwall_time_ms = 1000\n";
        fs::write(dir.path().join(MANIFEST_FILE), manifest).unwrap();
        let bundle = load_bundle(dir.path()).unwrap();
        assert_eq!(bundle.bundle_id, "b");
        assert!(bundle.artifacts.is_empty());
    }

    #[test]
    fn validate_accepts_the_fixture_bundle() {
        let registry = BackendRegistry::builtin();
        assert_eq!(validate_bundle(&sample_bundle(), &registry), Vec::<String>::new());
    }

    #[test]
    fn validate_flags_zero_memory_budget() {
        let mut bundle = sample_bundle();
        bundle.resource_limits.memory_budget = 0;
        bundle.content_digest = bundle.recompute_digest();
        let violations = validate_bundle(&bundle, &BackendRegistry::builtin());
        assert_eq!(violations.len(), 1, "{violations:?}");
        assert!(violations[0].contains("resource_limits"));
    }

    #[test]
    fn validate_flags_domain_toolchain_mismatch() {
        let mut bundle = sample_bundle();
        bundle.domain = Domain::GpuKernel;
        let violations = validate_bundle(&bundle, &BackendRegistry::builtin());
        assert_eq!(violations.len(), 1, "{violations:?}");
        assert!(violations[0].contains("gpu_kernel"));
        assert!(violations[0].contains("reference"));
    }

    #[test]
    fn validate_flags_digest_mismatch() {
        let mut bundle = sample_bundle();
        bundle.content_digest = "deadbeef".to_string();
        let violations = validate_bundle(&bundle, &BackendRegistry::builtin());
        assert_eq!(violations.len(), 1, "{violations:?}");
        assert!(violations[0].contains("content_digest"));
    }

    #[test]
    fn valid_bundle_loads_from_its_on_disk_form() {
        let bundle = sample_bundle();
        assert!(validate_bundle(&bundle, &BackendRegistry::builtin()).is_empty());
        let dir = tempfile::tempdir().unwrap();
        bundle.write_to_dir(dir.path()).unwrap();
        assert!(load_bundle(dir.path()).is_ok());
    }

    #[test]
    fn route_prompt_carries_domain_phrases() {
        let mut bundle = sample_bundle();

        bundle.domain = Domain::GpuKernel;
        let text = route_prompt(&bundle).unwrap().instruction_text;
        assert!(text.contains("warp divergence"));
        assert!(text.contains("shared memory"));

        bundle.domain = Domain::ChipDesign;
        let text = route_prompt(&bundle).unwrap().instruction_text;
        assert!(text.contains("combinational path depth"));

        bundle.domain = Domain::Cad;
        let text = route_prompt(&bundle).unwrap().instruction_text;
        assert!(text.contains("wall thickness"));
        assert!(text.contains("manifold"));

        bundle.domain = Domain::Embedded;
        let text = route_prompt(&bundle).unwrap().instruction_text;
        assert!(text.contains("peripheral register"));
    }

    #[test]
    fn route_prompt_covers_every_domain() {
        let mut bundle = sample_bundle();
        for domain in Domain::ALL {
            bundle.domain = domain;
            let routed = route_prompt(&bundle).unwrap();
            assert_eq!(routed.domain, domain);
            assert!(!routed.instruction_text.trim().is_empty());
        }
        bundle.domain = Domain::Reference;
        let text = route_prompt(&bundle).unwrap().instruction_text;
        assert!(text.contains("memory"));
        assert!(text.contains("step"));
    }

    #[test]
    fn route_prompt_is_pure_in_the_domain() {
        let a = sample_bundle();
        let mut b = sample_bundle();
        b.bundle_id = "other".to_string();
        b.artifacts.insert("extra.txt".to_string(), b"x".to_vec());
        b.content_digest = b.recompute_digest();
        assert_eq!(route_prompt(&a).unwrap(), route_prompt(&b).unwrap());
    }

    #[test]
    fn instruction_set_from_dir_reports_unrouteable_domains() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("reference.txt"), "custom reference text\n").unwrap();
        let set = InstructionSet::from_dir(dir.path()).unwrap();
        let bundle = sample_bundle();
        assert_eq!(
            set.route(&bundle).unwrap().instruction_text,
            "custom reference text\n"
        );
        let mut gpu = sample_bundle();
        gpu.domain = Domain::GpuKernel;
        assert!(matches!(
            set.route(&gpu),
            Err(RouteError::UnsupportedDomain { domain: Domain::GpuKernel })
        ));
    }
}
