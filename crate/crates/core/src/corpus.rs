//! Corpus assembly, thinking-depth statistics, and persistence.
//!
//! The assembled corpus is the union of real-executed trajectories and
//! world-model-amplified ones. Every amplified record is verified against
//! real execution (final candidate by default) and flagged; the default
//! export contains only real or verified records.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{
    FeedbackSource, Observation, ObservationSource, OutcomeLabel, RealExecutor,
};
use crate::envstore::BundleIndex;
use crate::traj_loop::{TerminalStatus, Trajectory, Turn};

/// Where a record's feedback ultimately came from and whether it was checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    RealExecution,
    WorldModelVerified,
    WorldModelUnverified,
}

impl Provenance {
    pub fn as_str(self) -> &'static str {
        match self {
            Provenance::RealExecution => "RealExecution",
            Provenance::WorldModelVerified => "WorldModelVerified",
            Provenance::WorldModelUnverified => "WorldModelUnverified",
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Outcome of verifying an amplified trajectory against real execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verification {
    pub final_candidate_real_label: OutcomeLabel,
    pub audited: bool,
}

/// A trajectory plus provenance and verification flags; the unit of the
/// training corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusRecord {
    pub trajectory: Trajectory,
    pub provenance: Provenance,
    pub verification: Option<Verification>,
    pub category: String,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("trajectory `{trajectory_id}` appears twice in the corpus")]
    DuplicateTrajectory { trajectory_id: String },

    #[error("trajectory `{trajectory_id}` has the wrong feedback source for its role")]
    SourceMismatch { trajectory_id: String },

    #[error("no bundle with digest `{digest}` in the index")]
    UnknownBundle { digest: String },

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("unsupported corpus schema: {found}")]
    SchemaVersionMismatch { found: String },

    #[error("corpus line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// How amplified trajectories are verified during assembly.
#[derive(Debug, Clone, Copy)]
pub struct AssemblePolicy {
    /// Execute the final candidate of each amplified trajectory for real.
    pub verify_final: bool,
    /// Re-execute every turn instead of only the final candidate.
    pub verify_full: bool,
}

impl Default for AssemblePolicy {
    fn default() -> Self {
        AssemblePolicy {
            verify_final: true,
            verify_full: false,
        }
    }
}

fn verdict_agrees(terminal: TerminalStatus, real_label: OutcomeLabel) -> bool {
    (real_label == OutcomeLabel::Pass) == (terminal == TerminalStatus::Solved)
}

/// Assemble the corpus union. Real trajectories pass through unchanged;
/// amplified ones are verified per `policy`. Verification failures mark the
/// record WorldModelUnverified, never drop it.
pub fn assemble(
    real: &[Trajectory],
    amplified: &[Trajectory],
    bundles: &BundleIndex,
    executor: &RealExecutor,
    policy: AssemblePolicy,
) -> Result<Vec<CorpusRecord>, CorpusError> {
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for trajectory in real.iter().chain(amplified.iter()) {
        if !seen.insert(trajectory.trajectory_id.as_str()) {
            return Err(CorpusError::DuplicateTrajectory {
                trajectory_id: trajectory.trajectory_id.clone(),
            });
        }
    }

    let category_of = |trajectory: &Trajectory| -> Result<String, CorpusError> {
        bundles
            .by_digest(&trajectory.bundle_digest)
            .map(|b| b.domain.as_str().to_string())
            .ok_or_else(|| CorpusError::UnknownBundle {
                digest: trajectory.bundle_digest.clone(),
            })
    };

    let mut records = Vec::with_capacity(real.len() + amplified.len());
    for trajectory in real {
        if trajectory.feedback_source != FeedbackSource::RealExecution {
            return Err(CorpusError::SourceMismatch {
                trajectory_id: trajectory.trajectory_id.clone(),
            });
        }
        records.push(CorpusRecord {
            category: category_of(trajectory)?,
            trajectory: trajectory.clone(),
            provenance: Provenance::RealExecution,
            verification: None,
        });
    }

    for trajectory in amplified {
        if trajectory.feedback_source != FeedbackSource::WorldModel {
            return Err(CorpusError::SourceMismatch {
                trajectory_id: trajectory.trajectory_id.clone(),
            });
        }
        let category = category_of(trajectory)?;
        let bundle = bundles
            .by_digest(&trajectory.bundle_digest)
            .expect("checked by category_of");

        let (provenance, verification) = match (policy.verify_final, trajectory.final_turn()) {
            (false, _) | (_, None) => (Provenance::WorldModelUnverified, None),
            (true, Some(final_turn)) => {
                let real_final = executor
                    .execute(bundle, &final_turn.code)
                    .unwrap_or_else(|e| {
                        Observation::backend_unavailable(format!("workspace failure: {e}"))
                    });
                if real_final.label == OutcomeLabel::BackendUnavailable {
                    (Provenance::WorldModelUnverified, None)
                } else {
                    let mut agrees = verdict_agrees(trajectory.terminal, real_final.label);
                    if agrees && policy.verify_full {
                        agrees = trajectory.turns.iter().all(|turn| {
                            executor
                                .execute(bundle, &turn.code)
                                .map(|obs| obs.label == turn.observation.label)
                                .unwrap_or(false)
                        });
                    }
                    let provenance = if agrees {
                        Provenance::WorldModelVerified
                    } else {
                        Provenance::WorldModelUnverified
                    };
                    (
                        provenance,
                        Some(Verification {
                            final_candidate_real_label: real_final.label,
                            audited: true,
                        }),
                    )
                }
            }
        };
        records.push(CorpusRecord {
            trajectory: trajectory.clone(),
            provenance,
            verification,
            category,
        });
    }
    Ok(records)
}

/// Per-category thinking/answer length statistics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthRow {
    pub category: String,
    pub median_think_chars: usize,
    pub p25_think: usize,
    pub p75_think: usize,
    pub median_answer_chars: usize,
    pub record_count: usize,
}

/// Rows sorted by category plus the spread of category medians.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthStats {
    pub rows: Vec<DepthRow>,
    /// max category median / min category median over thinking lengths.
    pub range_ratio: f64,
}

/// Rank-based quartile with lower interpolation: element at ceil(q*n),
/// 1-indexed, over the sorted values. `quarters` is q*4.
fn quartile_lower(sorted: &[usize], quarters: usize) -> usize {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let rank = (quarters * n).div_ceil(4).max(1);
    sorted[rank - 1]
}

fn char_count(text: &str) -> usize {
    text.chars().count()
}

/// Compute per-category medians and quartiles of thinking length plus the
/// median answer length.
///
/// Categories in `multi_turn_categories` contribute one thinking length per
/// turn (per-step); all others contribute the per-record sum over turns.
/// Answer length is always the final candidate's character count.
pub fn thinking_depth_stats(
    records: &[CorpusRecord],
    multi_turn_categories: &BTreeSet<String>,
) -> Result<DepthStats, CorpusError> {
    if records.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    let categories: BTreeSet<&str> = records.iter().map(|r| r.category.as_str()).collect();

    let mut rows = Vec::new();
    for category in categories {
        let members: Vec<&CorpusRecord> = records
            .iter()
            .filter(|r| r.category == category)
            .collect();
        let per_step = multi_turn_categories.contains(category);

        let mut think_lengths: Vec<usize> = Vec::new();
        let mut answer_lengths: Vec<usize> = Vec::new();
        for record in &members {
            let turns = &record.trajectory.turns;
            if per_step {
                think_lengths.extend(turns.iter().map(|t| char_count(&t.reasoning)));
            } else {
                think_lengths.push(turns.iter().map(|t| char_count(&t.reasoning)).sum());
            }
            answer_lengths.push(
                record
                    .trajectory
                    .final_turn()
                    .map(|t| char_count(&t.code))
                    .unwrap_or(0),
            );
        }
        if think_lengths.is_empty() {
            think_lengths.push(0);
        }
        think_lengths.sort_unstable();
        answer_lengths.sort_unstable();

        rows.push(DepthRow {
            category: category.to_string(),
            median_think_chars: quartile_lower(&think_lengths, 2),
            p25_think: quartile_lower(&think_lengths, 1),
            p75_think: quartile_lower(&think_lengths, 3),
            median_answer_chars: quartile_lower(&answer_lengths, 2),
            record_count: members.len(),
        });
    }

    let max_median = rows.iter().map(|r| r.median_think_chars).max().unwrap_or(0);
    let min_median = rows.iter().map(|r| r.median_think_chars).min().unwrap_or(0);
    let range_ratio = if min_median == 0 {
        if max_median == 0 {
            1.0
        } else {
            f64::INFINITY
        }
    } else {
        max_median as f64 / min_median as f64
    };
    Ok(DepthStats { rows, range_ratio })
}

const SCHEMA_HEADER: &str = "# trajectory-corpus schema=1";

#[derive(Serialize, Deserialize)]
struct TurnLine {
    k: usize,
    reasoning: String,
    code: String,
    label: OutcomeLabel,
    diagnostic: String,
    source: ObservationSource,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    numeric_outputs: Option<Vec<i64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    diff_summary: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct RecordLine {
    trajectory_id: String,
    seed_id: String,
    bundle_digest: String,
    feedback_source: FeedbackSource,
    provenance: Provenance,
    terminal: TerminalStatus,
    category: String,
    turns: Vec<TurnLine>,
    verification: Option<Verification>,
}

impl From<&CorpusRecord> for RecordLine {
    fn from(record: &CorpusRecord) -> Self {
        RecordLine {
            trajectory_id: record.trajectory.trajectory_id.clone(),
            seed_id: record.trajectory.seed_id.clone(),
            bundle_digest: record.trajectory.bundle_digest.clone(),
            feedback_source: record.trajectory.feedback_source,
            provenance: record.provenance,
            terminal: record.trajectory.terminal,
            category: record.category.clone(),
            turns: record
                .trajectory
                .turns
                .iter()
                .map(|turn| TurnLine {
                    k: turn.index,
                    reasoning: turn.reasoning.clone(),
                    code: turn.code.clone(),
                    label: turn.observation.label,
                    diagnostic: turn.observation.diagnostic.clone(),
                    source: turn.observation.source,
                    numeric_outputs: turn.observation.numeric_outputs.clone(),
                    diff_summary: turn.observation.diff_summary.clone(),
                })
                .collect(),
            verification: record.verification,
        }
    }
}

impl RecordLine {
    fn into_record(self, line: usize) -> Result<CorpusRecord, CorpusError> {
        let parse_err = |message: String| CorpusError::Parse { line, message };
        let real_record = self.provenance == Provenance::RealExecution;
        let real_source = self.feedback_source == FeedbackSource::RealExecution;
        if real_record != real_source {
            return Err(parse_err(format!(
                "provenance {} contradicts feedback source {}",
                self.provenance,
                self.feedback_source.as_str()
            )));
        }
        if self.provenance == Provenance::WorldModelVerified && self.verification.is_none() {
            return Err(parse_err(
                "WorldModelVerified record lacks verification".to_string(),
            ));
        }
        let mut turns = Vec::with_capacity(self.turns.len());
        for (position, turn) in self.turns.into_iter().enumerate() {
            if turn.k != position {
                return Err(parse_err(format!(
                    "turn index {} does not match position {position}",
                    turn.k
                )));
            }
            turns.push(Turn {
                index: turn.k,
                reasoning: turn.reasoning,
                code: turn.code,
                observation: Observation {
                    label: turn.label,
                    diagnostic: turn.diagnostic,
                    numeric_outputs: turn.numeric_outputs,
                    diff_summary: turn.diff_summary,
                    wall_time_ms: 0,
                    source: turn.source,
                },
            });
        }
        Ok(CorpusRecord {
            trajectory: Trajectory {
                trajectory_id: self.trajectory_id,
                seed_id: self.seed_id,
                bundle_digest: self.bundle_digest,
                turns,
                terminal: self.terminal,
                feedback_source: self.feedback_source,
            },
            provenance: self.provenance,
            verification: self.verification,
            category: self.category,
        })
    }
}

/// True for records the default export keeps.
pub fn exportable(record: &CorpusRecord) -> bool {
    record.provenance != Provenance::WorldModelUnverified
}

fn write_records<'a>(
    records: impl Iterator<Item = &'a CorpusRecord>,
    path: &Path,
) -> Result<usize, CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = fs::File::create(path).map_err(io_err)?;
    writeln!(file, "{SCHEMA_HEADER}").map_err(io_err)?;
    let mut count = 0usize;
    for record in records {
        let line = serde_json::to_string(&RecordLine::from(record)).map_err(|e| {
            CorpusError::Io {
                path: path.to_path_buf(),
                source: std::io::Error::other(e),
            }
        })?;
        writeln!(file, "{line}").map_err(io_err)?;
        count += 1;
    }
    Ok(count)
}

/// Default (sound) export: only RealExecution and WorldModelVerified records
/// are written. Returns the number of records written.
pub fn export(records: &[CorpusRecord], path: &Path) -> Result<usize, CorpusError> {
    write_records(records.iter().filter(|r| exportable(r)), path)
}

/// Persist every record regardless of provenance, so unverified records are
/// never silently dropped from campaign outputs.
pub fn export_all(records: &[CorpusRecord], path: &Path) -> Result<usize, CorpusError> {
    write_records(records.iter(), path)
}

/// Read a record file. Any bad line rejects the whole import.
pub fn import(path: &Path) -> Result<Vec<CorpusRecord>, CorpusError> {
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut lines = BufReader::new(file).lines().enumerate();

    let header = match lines.next() {
        Some((_, Ok(header))) => header,
        Some((_, Err(source))) => {
            return Err(CorpusError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
        None => {
            return Err(CorpusError::Parse {
                line: 1,
                message: "empty corpus file".to_string(),
            })
        }
    };
    if header != SCHEMA_HEADER {
        if header.starts_with("# trajectory-corpus schema=") {
            return Err(CorpusError::SchemaVersionMismatch { found: header });
        }
        return Err(CorpusError::Parse {
            line: 1,
            message: format!("bad header `{header}`"),
        });
    }

    let mut records = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: RecordLine = serde_json::from_str(&line).map_err(|e| CorpusError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        records.push(parsed.into_record(line_no)?);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::minilang::TEST_SPEC_ARTIFACT;
    use crate::envstore::{Domain, EnvironmentBundle, ResourceLimits};
    use crate::traj_loop::trajectory_id;
    use std::collections::BTreeMap;

    fn fixture_bundle() -> EnvironmentBundle {
        let mut artifacts = BTreeMap::new();
        artifacts.insert(TEST_SPEC_ARTIFACT.to_string(), b"5\n".to_vec());
        EnvironmentBundle::from_parts(
            "ref-corpus",
            Domain::Reference,
            "reference",
            artifacts,
            ResourceLimits {
                memory_budget: 8,
                step_limit: 100,
                wall_time_ms: 1000,
            },
        )
        .unwrap()
    }

    fn observation(label: OutcomeLabel, source: ObservationSource) -> Observation {
        Observation {
            label,
            diagnostic: if label == OutcomeLabel::Pass {
                String::new()
            } else {
                "diag text".to_string()
            },
            numeric_outputs: if label == OutcomeLabel::Pass {
                Some(vec![5])
            } else {
                None
            },
            diff_summary: None,
            wall_time_ms: 7,
            source,
        }
    }

    fn trajectory(
        id: &str,
        digest: &str,
        source: FeedbackSource,
        terminal: TerminalStatus,
        final_code: &str,
    ) -> Trajectory {
        let obs_source = match source {
            FeedbackSource::RealExecution => ObservationSource::Real,
            FeedbackSource::WorldModel => ObservationSource::Simulated,
        };
        Trajectory {
            trajectory_id: id.to_string(),
            seed_id: format!("seed-{id}"),
            bundle_digest: digest.to_string(),
            turns: vec![
                Turn {
                    index: 0,
                    reasoning: "first try".to_string(),
                    code: "mem 16\nset 0 5\nout 0\n".to_string(),
                    observation: observation(OutcomeLabel::MemoryFault, obs_source),
                },
                Turn {
                    index: 1,
                    reasoning: "shrink the declaration".to_string(),
                    code: final_code.to_string(),
                    observation: observation(
                        if terminal == TerminalStatus::Solved {
                            OutcomeLabel::Pass
                        } else {
                            OutcomeLabel::WrongOutput
                        },
                        obs_source,
                    ),
                },
            ],
            terminal,
            feedback_source: source,
        }
    }

    const GOOD: &str = "mem 8\nset 0 5\nout 0\n";
    const BAD: &str = "mem 8\nset 0 7\nout 0\n";

    #[test]
    fn assemble_with_no_amplified_is_the_real_set() {
        let bundle = fixture_bundle();
        let mut bundles = BundleIndex::new();
        bundles.insert(bundle.clone()).unwrap();
        let real = vec![trajectory(
            "r1",
            &bundle.content_digest,
            FeedbackSource::RealExecution,
            TerminalStatus::Solved,
            GOOD,
        )];
        let records = assemble(
            &real,
            &[],
            &bundles,
            &RealExecutor::builtin(),
            AssemblePolicy::default(),
        )
        .unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].provenance, Provenance::RealExecution);
        assert_eq!(records[0].category, "reference");
        assert!(records[0].verification.is_none());
    }

    #[test]
    fn confirmed_amplified_trajectory_is_verified() {
        let bundle = fixture_bundle();
        let mut bundles = BundleIndex::new();
        bundles.insert(bundle.clone()).unwrap();
        let amplified = vec![trajectory(
            "a1",
            &bundle.content_digest,
            FeedbackSource::WorldModel,
            TerminalStatus::Solved,
            GOOD,
        )];
        let records = assemble(
            &[],
            &amplified,
            &bundles,
            &RealExecutor::builtin(),
            AssemblePolicy::default(),
        )
        .unwrap();
        assert_eq!(records[0].provenance, Provenance::WorldModelVerified);
        assert_eq!(
            records[0].verification,
            Some(Verification {
                final_candidate_real_label: OutcomeLabel::Pass,
                audited: true
            })
        );
    }

    #[test]
    fn disagreeing_amplified_trajectory_is_unverified_and_filtered() {
        let bundle = fixture_bundle();
        let mut bundles = BundleIndex::new();
        bundles.insert(bundle.clone()).unwrap();
        // Simulated verdict Solved, but the final candidate emits the wrong
        // value under real execution.
        let amplified = vec![trajectory(
            "a2",
            &bundle.content_digest,
            FeedbackSource::WorldModel,
            TerminalStatus::Solved,
            BAD,
        )];
        let records = assemble(
            &[],
            &amplified,
            &bundles,
            &RealExecutor::builtin(),
            AssemblePolicy::default(),
        )
        .unwrap();
        assert_eq!(records[0].provenance, Provenance::WorldModelUnverified);
        assert_eq!(
            records[0].verification.unwrap().final_candidate_real_label,
            OutcomeLabel::WrongOutput
        );

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.records");
        let written = export(&records, &path).unwrap();
        assert_eq!(written, 0);
        assert_eq!(export_all(&records, &path).unwrap(), 1);
    }

    #[test]
    fn verify_final_off_leaves_everything_unverified() {
        let bundle = fixture_bundle();
        let mut bundles = BundleIndex::new();
        bundles.insert(bundle.clone()).unwrap();
        let amplified = vec![trajectory(
            "a3",
            &bundle.content_digest,
            FeedbackSource::WorldModel,
            TerminalStatus::Solved,
            GOOD,
        )];
        let records = assemble(
            &[],
            &amplified,
            &bundles,
            &RealExecutor::builtin(),
            AssemblePolicy {
                verify_final: false,
                verify_full: false,
            },
        )
        .unwrap();
        assert_eq!(records[0].provenance, Provenance::WorldModelUnverified);
        assert!(records[0].verification.is_none());
    }

    #[test]
    fn unavailable_backend_marks_unverified_without_dropping() {
        let mut bundle = fixture_bundle();
        bundle.toolchain = "missing".to_string();
        let mut bundles = BundleIndex::new();
        bundles.insert(bundle.clone()).unwrap();
        let amplified = vec![trajectory(
            "a4",
            &bundle.content_digest,
            FeedbackSource::WorldModel,
            TerminalStatus::Solved,
            GOOD,
        )];
        let records = assemble(
            &[],
            &amplified,
            &bundles,
            &RealExecutor::builtin(),
            AssemblePolicy::default(),
        )
        .unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(records[0].provenance, Provenance::WorldModelUnverified);
    }

    #[test]
    fn duplicate_trajectory_ids_are_rejected() {
        let bundle = fixture_bundle();
        let mut bundles = BundleIndex::new();
        bundles.insert(bundle.clone()).unwrap();
        let t = trajectory(
            "dup",
            &bundle.content_digest,
            FeedbackSource::RealExecution,
            TerminalStatus::Solved,
            GOOD,
        );
        let err = assemble(
            &[t.clone(), t],
            &[],
            &bundles,
            &RealExecutor::builtin(),
            AssemblePolicy::default(),
        )
        .unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateTrajectory { .. }));
    }

    fn record_with_lengths(category: &str, think: &[usize], answer: usize, id: &str) -> CorpusRecord {
        let turns: Vec<Turn> = think
            .iter()
            .enumerate()
            .map(|(k, len)| Turn {
                index: k,
                reasoning: "x".repeat(*len),
                code: if k + 1 == think.len() {
                    "y".repeat(answer)
                } else {
                    "z".to_string()
                },
                observation: observation(
                    if k + 1 == think.len() {
                        OutcomeLabel::Pass
                    } else {
                        OutcomeLabel::WrongOutput
                    },
                    ObservationSource::Real,
                ),
            })
            .collect();
        CorpusRecord {
            trajectory: Trajectory {
                trajectory_id: id.to_string(),
                seed_id: id.to_string(),
                bundle_digest: "d".to_string(),
                turns,
                terminal: TerminalStatus::Solved,
                feedback_source: FeedbackSource::RealExecution,
            },
            provenance: Provenance::RealExecution,
            verification: None,
            category: category.to_string(),
        }
    }

    #[test]
    fn single_record_category_collapses_to_its_length() {
        let records = vec![record_with_lengths("cad", &[11, 31], 9, "only")];
        let stats = thinking_depth_stats(&records, &BTreeSet::new()).unwrap();
        assert_eq!(stats.rows.len(), 1);
        let row = &stats.rows[0];
        // Sum over turns: 42 characters of thinking.
        assert_eq!(row.median_think_chars, 42);
        assert_eq!(row.p25_think, 42);
        assert_eq!(row.p75_think, 42);
        assert_eq!(row.median_answer_chars, 9);
        assert_eq!(row.record_count, 1);
    }

    #[test]
    fn per_step_categories_use_turn_level_lengths() {
        let records = vec![
            record_with_lengths("agentic", &[10, 20, 30], 5, "a"),
            record_with_lengths("agentic", &[40], 5, "b"),
        ];
        let multi = BTreeSet::from(["agentic".to_string()]);
        let stats = thinking_depth_stats(&records, &multi).unwrap();
        let row = &stats.rows[0];
        // Per-step values sorted: [10, 20, 30, 40], lower-rank quartiles.
        assert_eq!(row.p25_think, 10);
        assert_eq!(row.median_think_chars, 20);
        assert_eq!(row.p75_think, 30);
        assert_eq!(row.record_count, 2);

        // Same records without the flag: sums [40, 60].
        let stats = thinking_depth_stats(&records, &BTreeSet::new()).unwrap();
        assert_eq!(stats.rows[0].median_think_chars, 40);
        assert_eq!(stats.rows[0].p75_think, 60);
    }

    #[test]
    fn stats_match_a_brute_force_sort_oracle() {
        // Deterministic synthetic corpus over three categories.
        let mut records = Vec::new();
        let mut lengths: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        let mut state = 9u64;
        for i in 0..300 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let category = ["alpha", "beta", "gamma"][(state >> 33) as usize % 3];
            let think = (state % 997) as usize;
            records.push(record_with_lengths(category, &[think], 3, &format!("r{i}")));
            lengths.entry(category).or_default().push(think);
        }
        let stats = thinking_depth_stats(&records, &BTreeSet::new()).unwrap();

        for row in &stats.rows {
            let mut sorted = lengths[row.category.as_str()].clone();
            sorted.sort_unstable();
            let n = sorted.len();
            let rank = |q_num: usize| sorted[((q_num * n).div_ceil(4)).max(1) - 1];
            assert_eq!(row.p25_think, rank(1), "{}", row.category);
            assert_eq!(row.median_think_chars, rank(2), "{}", row.category);
            assert_eq!(row.p75_think, rank(3), "{}", row.category);
            assert!(row.p25_think <= row.median_think_chars);
            assert!(row.median_think_chars <= row.p75_think);
        }

        let medians: Vec<usize> = stats.rows.iter().map(|r| r.median_think_chars).collect();
        let expected_ratio =
            *medians.iter().max().unwrap() as f64 / *medians.iter().min().unwrap() as f64;
        assert_eq!(stats.range_ratio, expected_ratio);
    }

    #[test]
    fn stats_reject_an_empty_corpus() {
        assert!(matches!(
            thinking_depth_stats(&[], &BTreeSet::new()),
            Err(CorpusError::EmptyCorpus)
        ));
    }

    fn mixed_records() -> Vec<CorpusRecord> {
        let bundle = fixture_bundle();
        let mut bundles = BundleIndex::new();
        bundles.insert(bundle.clone()).unwrap();
        let digest = &bundle.content_digest;
        let real: Vec<Trajectory> = (0..3)
            .map(|i| {
                let mut t = trajectory(
                    &trajectory_id(&format!("s{i}"), digest, FeedbackSource::RealExecution, 1),
                    digest,
                    FeedbackSource::RealExecution,
                    TerminalStatus::Solved,
                    GOOD,
                );
                t.seed_id = format!("s{i}");
                t
            })
            .collect();
        let amplified: Vec<Trajectory> = (0..4)
            .map(|i| {
                let mut t = trajectory(
                    &trajectory_id(&format!("s{i}"), digest, FeedbackSource::WorldModel, 1),
                    digest,
                    FeedbackSource::WorldModel,
                    TerminalStatus::Solved,
                    if i == 0 { BAD } else { GOOD },
                );
                t.seed_id = format!("s{i}");
                t
            })
            .collect();
        assemble(
            &real,
            &amplified,
            &bundles,
            &RealExecutor::builtin(),
            AssemblePolicy::default(),
        )
        .unwrap()
    }

    #[test]
    fn export_import_roundtrip_is_field_exact() {
        let records = mixed_records();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.records");

        let written = export_all(&records, &path).unwrap();
        assert_eq!(written, records.len());
        let imported = import(&path).unwrap();

        // wall_time_ms is excluded by the format; every other field must
        // round-trip exactly. Observation equality already ignores wall time.
        assert_eq!(imported, records);
    }

    #[test]
    fn two_export_cycles_are_byte_identical() {
        let records = mixed_records();
        let dir = tempfile::tempdir().unwrap();
        let first = dir.path().join("a.records");
        let second = dir.path().join("b.records");
        export(&records, &first).unwrap();
        let imported = import(&first).unwrap();
        export(&imported, &second).unwrap();
        assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
    }

    #[test]
    fn default_export_is_sound() {
        let records = mixed_records();
        assert!(records
            .iter()
            .any(|r| r.provenance == Provenance::WorldModelUnverified));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sound.records");
        export(&records, &path).unwrap();
        let imported = import(&path).unwrap();
        assert!(!imported.is_empty());
        assert!(imported
            .iter()
            .all(|r| r.provenance != Provenance::WorldModelUnverified));
    }

    #[test]
    fn schema_bump_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v2.records");
        fs::write(&path, "# trajectory-corpus schema=2\n").unwrap();
        assert!(matches!(
            import(&path),
            Err(CorpusError::SchemaVersionMismatch { .. })
        ));
    }

    #[test]
    fn parse_errors_name_the_line_and_reject_the_import() {
        let records = mixed_records();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.records");
        export_all(&records, &path).unwrap();
        let mut text = fs::read_to_string(&path).unwrap();
        text.push_str("{\"not\": \"a record\"}\n");
        fs::write(&path, text).unwrap();
        match import(&path) {
            Err(CorpusError::Parse { line, .. }) => {
                assert_eq!(line, records.len() + 2);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn export_count_equals_exportable_input_length() {
        let records = mixed_records();
        let sound = records.iter().filter(|r| exportable(r)).count();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("count.records");
        assert_eq!(export(&records, &path).unwrap(), sound);
    }
}
