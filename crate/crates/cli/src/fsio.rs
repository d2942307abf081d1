//! File plumbing: atomic outputs and the seeds file.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use trajforge_core::corpus::{self, CorpusRecord};
use trajforge_core::envstore::{BundleIndex, EnvironmentBundle, TaskSeed};
use trajforge_core::WorldModel;

/// Write through a temp file in the target directory plus rename, so an
/// interrupted campaign never leaves a truncated output.
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let dir = dir.unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let tmp = tempfile::Builder::new()
        .prefix(".tmp-")
        .tempfile_in(dir)
        .with_context(|| format!("cannot create temp file in {}", dir.display()))?;
    fs::write(tmp.path(), content)
        .with_context(|| format!("cannot write {}", tmp.path().display()))?;
    tmp.persist(path)
        .with_context(|| format!("cannot rename into {}", path.display()))?;
    Ok(())
}

/// Atomic corpus export. Returns the number of records written.
pub fn export_records_atomic(
    records: &[CorpusRecord],
    path: &Path,
    include_unverified: bool,
) -> Result<usize> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    let dir = dir.unwrap_or(Path::new("."));
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let tmp = tempfile::Builder::new()
        .prefix(".records-")
        .tempfile_in(dir)?
        .into_temp_path();
    let count = if include_unverified {
        corpus::export_all(records, &tmp)?
    } else {
        corpus::export(records, &tmp)?
    };
    tmp.persist(path)
        .with_context(|| format!("cannot rename into {}", path.display()))?;
    Ok(count)
}

pub fn save_params_atomic(params: &WorldModel, path: &Path) -> Result<()> {
    write_atomic(path, &params.to_file_string())
}

/// One line of the seeds file: a task seed plus an optional bundle id
/// (defaults to the seed id).
#[derive(Debug, Clone, Deserialize)]
pub struct SeedEntry {
    #[serde(flatten)]
    pub seed: TaskSeed,
    #[serde(default)]
    pub bundle: Option<String>,
}

impl SeedEntry {
    pub fn bundle_id(&self) -> &str {
        self.bundle.as_deref().unwrap_or(&self.seed.seed_id)
    }
}

/// Load a JSON-lines seeds file.
pub fn load_seeds(path: &Path) -> Result<Vec<SeedEntry>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read seeds file {}", path.display()))?;
    let mut entries = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let entry: SeedEntry = serde_json::from_str(line)
            .with_context(|| format!("seeds line {}: bad record", idx + 1))?;
        if entry.seed.seed_id.is_empty() {
            bail!("seeds line {}: seed_id must be non-empty", idx + 1);
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// Resolve each seed's bundle by id, failing on the first missing one.
pub fn seed_bundle_map(
    entries: &[SeedEntry],
    index: &BundleIndex,
) -> Result<BTreeMap<String, Arc<EnvironmentBundle>>> {
    let mut map = BTreeMap::new();
    for entry in entries {
        let bundle = index
            .by_id(entry.bundle_id())
            .with_context(|| {
                format!(
                    "seed `{}` references bundle `{}` which is not in the bundle directory",
                    entry.seed.seed_id,
                    entry.bundle_id()
                )
            })?;
        map.insert(entry.seed.seed_id.clone(), Arc::clone(bundle));
    }
    Ok(map)
}
