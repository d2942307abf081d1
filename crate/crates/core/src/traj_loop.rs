//! The elicitation-execution-feedback loop.
//!
//! [`synthesize_trajectory`] runs one task: the generator proposes a
//! candidate, the environment oracle judges it, and the feedback flows back
//! into the next proposal. The same loop runs against the real executor and
//! against the learned proxy; only the oracle changes.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backends::{ExecutionOracle, FeedbackSource, Observation, OutcomeLabel};
use crate::envstore::{EnvironmentBundle, InstructionSet, TaskSeed};
use crate::generator::{Generator, GeneratorContext, GeneratorFactory, PriorTurn};

/// One generator/oracle exchange inside a trajectory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    /// Position in the parent trajectory, starting at 0.
    pub index: usize,
    pub reasoning: String,
    pub code: String,
    pub observation: Observation,
}

/// How a trajectory ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminalStatus {
    /// The last turn passed.
    Solved,
    /// K correction rounds elapsed without a pass.
    Exhausted,
    /// An abort label or a generator failure ended the loop early.
    Aborted,
}

impl TerminalStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            TerminalStatus::Solved => "Solved",
            TerminalStatus::Exhausted => "Exhausted",
            TerminalStatus::Aborted => "Aborted",
        }
    }
}

/// A full multi-turn record for one seed under one feedback source.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub trajectory_id: String,
    pub seed_id: String,
    pub bundle_digest: String,
    pub turns: Vec<Turn>,
    pub terminal: TerminalStatus,
    pub feedback_source: FeedbackSource,
}

impl Trajectory {
    /// Final pass/fail verdict.
    pub fn solved(&self) -> bool {
        self.terminal == TerminalStatus::Solved
    }

    pub fn final_turn(&self) -> Option<&Turn> {
        self.turns.last()
    }
}

/// Loop parameters. `max_correction_rounds` is K; a trajectory holds at most
/// K+1 turns (initial attempt plus K revisions).
#[derive(Debug, Clone)]
pub struct LoopConfig {
    pub max_correction_rounds: usize,
    /// Labels that end the loop early without consuming correction rounds.
    pub abort_on: BTreeSet<OutcomeLabel>,
    /// Campaign nonce mixed into trajectory ids so paired real/simulated
    /// campaigns can be matched later.
    pub campaign_nonce: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig {
            max_correction_rounds: 4,
            abort_on: BTreeSet::from([OutcomeLabel::BackendUnavailable]),
            campaign_nonce: 0,
        }
    }
}

impl LoopConfig {
    pub fn with_rounds(max_correction_rounds: usize) -> Self {
        LoopConfig {
            max_correction_rounds,
            ..Self::default()
        }
    }
}

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("seed `{seed_id}` has no bundle")]
    MissingBundle { seed_id: String },

    #[error("parallelism must be at least 1")]
    ZeroParallelism,
}

/// Deterministic trajectory id: hash of seed, bundle digest, feedback source
/// and campaign nonce.
pub fn trajectory_id(
    seed_id: &str,
    bundle_digest: &str,
    source: FeedbackSource,
    campaign_nonce: u64,
) -> String {
    let mut hasher = Sha256::new();
    hasher.update(seed_id.as_bytes());
    hasher.update(b"\n");
    hasher.update(bundle_digest.as_bytes());
    hasher.update(b"\n");
    hasher.update(source.as_str().as_bytes());
    hasher.update(b"\n");
    hasher.update(campaign_nonce.to_be_bytes());
    hex::encode(&hasher.finalize()[..8])
}

/// Run the loop for one seed until first pass, K exhausted rounds, an abort
/// label, or a generator failure. Every proposed candidate is evaluated
/// exactly once; the context at turn k contains exactly turns 0..k-1.
pub fn synthesize_trajectory(
    seed: &TaskSeed,
    bundle: &EnvironmentBundle,
    gen: &mut dyn Generator,
    env: &dyn ExecutionOracle,
    config: &LoopConfig,
) -> Trajectory {
    let feedback_source = env.feedback_source();
    let id = trajectory_id(
        &seed.seed_id,
        &bundle.content_digest,
        feedback_source,
        config.campaign_nonce,
    );
    let mut turns: Vec<Turn> = Vec::new();
    let mut history: Vec<PriorTurn> = Vec::new();
    let mut terminal = TerminalStatus::Exhausted;

    let instructions = match InstructionSet::builtin().route(bundle) {
        Ok(instructions) => instructions,
        Err(_) => {
            return Trajectory {
                trajectory_id: id,
                seed_id: seed.seed_id.clone(),
                bundle_digest: bundle.content_digest.clone(),
                turns,
                terminal: TerminalStatus::Aborted,
                feedback_source,
            }
        }
    };

    for index in 0..=config.max_correction_rounds {
        let context = GeneratorContext {
            instructions: instructions.clone(),
            seed: seed.clone(),
            history: history.clone(),
        };
        let proposal = match gen.propose(&context) {
            Ok(proposal) => proposal,
            Err(_) => {
                terminal = TerminalStatus::Aborted;
                break;
            }
        };
        let observation = env.evaluate(bundle, &proposal.code);
        turns.push(Turn {
            index,
            reasoning: proposal.reasoning.clone(),
            code: proposal.code.clone(),
            observation: observation.clone(),
        });
        if observation.label == OutcomeLabel::Pass {
            terminal = TerminalStatus::Solved;
            break;
        }
        if config.abort_on.contains(&observation.label) {
            terminal = TerminalStatus::Aborted;
            break;
        }
        history.push(PriorTurn {
            reasoning: proposal.reasoning,
            code: proposal.code,
            observation,
        });
    }

    Trajectory {
        trajectory_id: id,
        seed_id: seed.seed_id.clone(),
        bundle_digest: bundle.content_digest.clone(),
        turns,
        terminal,
        feedback_source,
    }
}

/// Synthesize one trajectory per seed on a bounded worker pool. Output order
/// matches seed order; per-seed aborts are recorded in the trajectory, never
/// thrown.
pub fn run_campaign(
    seeds: &[TaskSeed],
    bundles: &BTreeMap<String, Arc<EnvironmentBundle>>,
    factory: &dyn GeneratorFactory,
    env: &dyn ExecutionOracle,
    config: &LoopConfig,
    parallelism: usize,
) -> Result<Vec<Trajectory>, CampaignError> {
    if parallelism == 0 {
        return Err(CampaignError::ZeroParallelism);
    }
    for seed in seeds {
        if !bundles.contains_key(&seed.seed_id) {
            return Err(CampaignError::MissingBundle {
                seed_id: seed.seed_id.clone(),
            });
        }
    }

    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Trajectory>>> = seeds.iter().map(|_| Mutex::new(None)).collect();
    let workers = parallelism.min(seeds.len());
    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= seeds.len() {
                    break;
                }
                let seed = &seeds[i];
                let bundle = &bundles[&seed.seed_id];
                let mut gen = factory.instance(seed);
                let trajectory = synthesize_trajectory(seed, bundle, gen.as_mut(), env, config);
                *slots[i].lock().unwrap() = Some(trajectory);
            });
        }
    });
    Ok(slots
        .into_iter()
        .map(|slot| slot.into_inner().unwrap().expect("worker filled every slot"))
        .collect())
}
