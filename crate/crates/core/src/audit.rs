//! Proxy fidelity measurement and spot-check audit rounds.
//!
//! Outcome prediction accuracy is per-turn label agreement against the real
//! backend; trajectory agreement is end-to-end verdict consistency over
//! paired real/simulated runs. Audit rounds re-execute a deterministic sample
//! of amplified turns on the real backend and turn every mismatch into a
//! corrected training turn for recalibration.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::backends::{FeedbackSource, Observation, OutcomeLabel, RealExecutor};
use crate::envstore::{BundleIndex, Domain};
use crate::icwm::{predict_from_features, BundleFeatures, TrainingTurn, WorldModelParameters};
use crate::scalar::Scalar;
use crate::traj_loop::Trajectory;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("evaluation set is empty")]
    EmptyEvaluationSet,

    #[error("pairing error: {reason}")]
    PairingError { reason: String },

    #[error("held-out turn (bundle `{bundle_digest}`, code hash `{code_hash}`) appears in the training manifest")]
    ContaminationError {
        bundle_digest: String,
        code_hash: String,
    },

    #[error("sample fraction must be in (0, 1], got {value}")]
    InvalidSampleFraction { value: f64 },

    #[error("trajectory `{trajectory_id}` is not world-model sourced")]
    SourceMismatch { trajectory_id: String },

    #[error("no bundle with digest `{digest}` in the index")]
    UnknownBundle { digest: String },
}

/// Fraction of pairs whose labels match. Diagnostics are ignored.
pub fn outcome_accuracy(pairs: &[(Observation, Observation)]) -> Result<f64, AuditError> {
    if pairs.is_empty() {
        return Err(AuditError::EmptyEvaluationSet);
    }
    let matches = pairs
        .iter()
        .filter(|(predicted, actual)| predicted.label == actual.label)
        .count();
    Ok(matches as f64 / pairs.len() as f64)
}

fn check_pair(real: &Trajectory, simulated: &Trajectory) -> Result<(), AuditError> {
    if real.seed_id != simulated.seed_id || real.bundle_digest != simulated.bundle_digest {
        return Err(AuditError::PairingError {
            reason: format!(
                "trajectories `{}` and `{}` have mismatched seed or bundle",
                real.trajectory_id, simulated.trajectory_id
            ),
        });
    }
    if real.feedback_source != FeedbackSource::RealExecution {
        return Err(AuditError::PairingError {
            reason: format!("trajectory `{}` is not real-executed", real.trajectory_id),
        });
    }
    if simulated.feedback_source != FeedbackSource::WorldModel {
        return Err(AuditError::PairingError {
            reason: format!(
                "trajectory `{}` is not world-model sourced",
                simulated.trajectory_id
            ),
        });
    }
    Ok(())
}

/// Fraction of pairs whose final pass/fail verdicts coincide. Agreement is
/// measured, never inferred from per-turn accuracy.
pub fn trajectory_agreement(paired: &[(Trajectory, Trajectory)]) -> Result<f64, AuditError> {
    if paired.is_empty() {
        return Err(AuditError::EmptyEvaluationSet);
    }
    let mut agreeing = 0usize;
    for (real, simulated) in paired {
        check_pair(real, simulated)?;
        if real.solved() == simulated.solved() {
            agreeing += 1;
        }
    }
    Ok(agreeing as f64 / paired.len() as f64)
}

/// A paired real/simulated run of the same seed and bundle.
#[derive(Debug, Clone)]
pub struct TrajectoryPair {
    pub domain: Domain,
    pub real: Trajectory,
    pub simulated: Trajectory,
}

/// One per-domain fidelity row. Fields are `None` when that side of the
/// evaluation had no data for the domain; the report never derives one
/// metric from the other.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityRow {
    pub domain: Domain,
    pub held_out_turns: usize,
    pub outcome_accuracy: Option<f64>,
    pub trajectory_pairs: usize,
    pub trajectory_agreement: Option<f64>,
    pub gap_pp: Option<f64>,
}

/// Per-domain rows plus unweighted overall means.
#[derive(Debug, Clone, PartialEq)]
pub struct FidelityReport {
    pub rows: Vec<FidelityRow>,
    pub mean_outcome_accuracy: Option<f64>,
    pub mean_trajectory_agreement: Option<f64>,
    pub mean_gap_pp: Option<f64>,
}

fn fmt_opt(value: Option<f64>, precision: usize) -> String {
    match value {
        Some(v) => format!("{v:.precision$}"),
        None => "-".to_string(),
    }
}

impl FidelityReport {
    /// Human-readable table.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<12} {:>9} {:>8} {:>6} {:>10} {:>7}",
            "domain", "held_out", "acc", "pairs", "agreement", "gap_pp"
        );
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{:<12} {:>9} {:>8} {:>6} {:>10} {:>7}",
                row.domain,
                row.held_out_turns,
                fmt_opt(row.outcome_accuracy, 4),
                row.trajectory_pairs,
                fmt_opt(row.trajectory_agreement, 4),
                fmt_opt(row.gap_pp, 2),
            );
        }
        let _ = writeln!(
            out,
            "{:<12} {:>9} {:>8} {:>6} {:>10} {:>7}",
            "overall",
            "",
            fmt_opt(self.mean_outcome_accuracy, 4),
            "",
            fmt_opt(self.mean_trajectory_agreement, 4),
            fmt_opt(self.mean_gap_pp, 2),
        );
        out
    }

    /// Machine-readable record file: one tab-separated row per domain.
    pub fn tsv(&self) -> String {
        let mut out = String::new();
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}",
                row.domain,
                row.held_out_turns,
                fmt_opt(row.outcome_accuracy, 6),
                row.trajectory_pairs,
                fmt_opt(row.trajectory_agreement, 6),
                fmt_opt(row.gap_pp, 4),
            );
        }
        out
    }
}

fn unweighted_mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let collected: Vec<f64> = values.collect();
    if collected.is_empty() {
        None
    } else {
        Some(collected.iter().sum::<f64>() / collected.len() as f64)
    }
}

/// Evaluate held-out turns and paired trajectories per domain.
///
/// The held-out set must be disjoint from the model's training manifest;
/// any overlap is a contamination error.
pub fn run_fidelity_eval<S: Scalar>(
    held_out: &[TrainingTurn],
    params: &WorldModelParameters<S>,
    traj_pairs: &[TrajectoryPair],
) -> Result<FidelityReport, AuditError> {
    for turn in held_out {
        if params.contains_turn(turn) {
            return Err(AuditError::ContaminationError {
                bundle_digest: turn.bundle_digest.clone(),
                code_hash: crate::icwm::code_hash(&turn.code),
            });
        }
    }

    let mut domains: Vec<Domain> = Vec::new();
    for domain in Domain::ALL {
        let in_turns = held_out.iter().any(|t| t.domain == domain);
        let in_pairs = traj_pairs.iter().any(|p| p.domain == domain);
        if in_turns || in_pairs {
            domains.push(domain);
        }
    }

    let mut rows = Vec::new();
    for domain in domains {
        let turns: Vec<&TrainingTurn> =
            held_out.iter().filter(|t| t.domain == domain).collect();
        let outcome = if turns.is_empty() {
            None
        } else {
            let pairs: Vec<(Observation, Observation)> = turns
                .iter()
                .map(|t| {
                    let predicted =
                        predict_from_features(params, t.domain, &t.bundle_features, &t.code);
                    (predicted.observation, t.true_observation.clone())
                })
                .collect();
            Some(outcome_accuracy(&pairs)?)
        };

        let pairs: Vec<(Trajectory, Trajectory)> = traj_pairs
            .iter()
            .filter(|p| p.domain == domain)
            .map(|p| (p.real.clone(), p.simulated.clone()))
            .collect();
        let agreement = if pairs.is_empty() {
            None
        } else {
            Some(trajectory_agreement(&pairs)?)
        };

        let gap_pp = match (outcome, agreement) {
            (Some(acc), Some(agree)) => Some((acc - agree) * 100.0),
            _ => None,
        };
        rows.push(FidelityRow {
            domain,
            held_out_turns: turns.len(),
            outcome_accuracy: outcome,
            trajectory_pairs: pairs.len(),
            trajectory_agreement: agreement,
            gap_pp,
        });
    }

    Ok(FidelityReport {
        mean_outcome_accuracy: unweighted_mean(rows.iter().filter_map(|r| r.outcome_accuracy)),
        mean_trajectory_agreement: unweighted_mean(
            rows.iter().filter_map(|r| r.trajectory_agreement),
        ),
        mean_gap_pp: unweighted_mean(rows.iter().filter_map(|r| r.gap_pp)),
        rows,
    })
}

/// Position of one turn inside an amplified campaign.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TurnRef {
    pub trajectory_id: String,
    pub turn_index: usize,
}

/// One detected label mismatch plus its ground-truth correction.
#[derive(Debug, Clone)]
pub struct AuditFinding {
    pub turn: TurnRef,
    pub predicted_label: OutcomeLabel,
    pub true_label: OutcomeLabel,
    pub corrected: TrainingTurn,
}

/// Result of one audit round.
#[derive(Debug, Clone, Default)]
pub struct AuditRound {
    pub findings: Vec<AuditFinding>,
    pub corrected_turns: Vec<TrainingTurn>,
    pub sampled: usize,
    /// Samples whose re-execution came back Backend_Unavailable; excluded
    /// from findings.
    pub unverifiable: Vec<TurnRef>,
}

/// Re-execute a deterministic sample of amplified turns on the real backend.
/// Every label mismatch yields a finding and a corrected training turn;
/// detection on sampled turns is exact.
pub fn audit_round(
    amplified: &[Trajectory],
    bundles: &BundleIndex,
    executor: &RealExecutor,
    sample_fraction: f64,
    audit_seed: u64,
) -> Result<AuditRound, AuditError> {
    if !(sample_fraction > 0.0 && sample_fraction <= 1.0) {
        return Err(AuditError::InvalidSampleFraction {
            value: sample_fraction,
        });
    }
    for trajectory in amplified {
        if trajectory.feedback_source != FeedbackSource::WorldModel {
            return Err(AuditError::SourceMismatch {
                trajectory_id: trajectory.trajectory_id.clone(),
            });
        }
        if bundles.by_digest(&trajectory.bundle_digest).is_none() {
            return Err(AuditError::UnknownBundle {
                digest: trajectory.bundle_digest.clone(),
            });
        }
    }

    let all_turns: Vec<(usize, usize)> = amplified
        .iter()
        .enumerate()
        .flat_map(|(ti, t)| (0..t.turns.len()).map(move |ki| (ti, ki)))
        .collect();
    if all_turns.is_empty() {
        return Ok(AuditRound::default());
    }

    let sample_size = ((sample_fraction * all_turns.len() as f64).ceil() as usize)
        .clamp(1, all_turns.len());
    let mut rng = ChaCha8Rng::seed_from_u64(audit_seed);
    let mut picked: Vec<usize> =
        rand::seq::index::sample(&mut rng, all_turns.len(), sample_size).into_vec();
    picked.sort_unstable();

    let mut round = AuditRound {
        sampled: sample_size,
        ..AuditRound::default()
    };
    for flat in picked {
        let (ti, ki) = all_turns[flat];
        let trajectory = &amplified[ti];
        let turn = &trajectory.turns[ki];
        let bundle = bundles
            .by_digest(&trajectory.bundle_digest)
            .expect("checked above");
        let turn_ref = TurnRef {
            trajectory_id: trajectory.trajectory_id.clone(),
            turn_index: turn.index,
        };

        let real = executor
            .execute(bundle, &turn.code)
            .unwrap_or_else(|e| Observation::backend_unavailable(format!("workspace failure: {e}")));
        if real.label == OutcomeLabel::BackendUnavailable {
            round.unverifiable.push(turn_ref);
            continue;
        }
        if real.label != turn.observation.label {
            let corrected = TrainingTurn {
                domain: bundle.domain,
                bundle_digest: trajectory.bundle_digest.clone(),
                bundle_features: BundleFeatures::of(bundle),
                code: turn.code.clone(),
                true_observation: real.clone(),
            };
            round.findings.push(AuditFinding {
                turn: turn_ref,
                predicted_label: turn.observation.label,
                true_label: real.label,
                corrected: corrected.clone(),
            });
            round.corrected_turns.push(corrected);
        }
    }
    Ok(round)
}
