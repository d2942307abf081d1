//! The learned execution proxy.
//!
//! Maps (environment, candidate code) to a predicted observation. Trained on
//! single-turn pairs extracted from real trajectories; at desk scale the
//! model is a featurized multinomial logistic classifier with per-label
//! diagnostic templates. [`WorldModelEnv`] exposes a trained model through
//! the same oracle interface as the real executor, so the trajectory loop
//! runs unchanged during amplification.

pub mod features;
mod io;
pub mod objective;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backends::{
    ExecutionOracle, FeedbackSource, Observation, ObservationSource, OutcomeLabel, RealExecutor,
};
use crate::envstore::{BundleIndex, Domain, EnvironmentBundle};
use crate::scalar::Scalar;
use crate::traj_loop::Trajectory;

pub use features::{featurize, BundleFeatures, FeatureVector, Vocabulary};
pub use io::ParamsError;
pub use objective::{gradient, loss, softmax, Dataset, SparseRow, Weights, LABEL_COUNT};

/// Hex-encoded SHA-256 of candidate code, used in training keys.
pub fn code_hash(code: &str) -> String {
    hex::encode(Sha256::digest(code.as_bytes()))
}

/// One real execution turn, the unit the proxy trains on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingTurn {
    pub domain: Domain,
    pub bundle_digest: String,
    pub bundle_features: BundleFeatures,
    pub code: String,
    pub true_observation: Observation,
}

impl TrainingTurn {
    /// Membership key used by the contamination check.
    pub fn key(&self) -> String {
        format!("{} {}", self.bundle_digest, code_hash(&self.code))
    }
}

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("trajectory `{trajectory_id}` is not real-executed")]
    SourceMismatch { trajectory_id: String },

    #[error("no bundle with digest `{digest}` in the index")]
    UnknownBundle { digest: String },
}

/// Flatten real trajectories into single-turn training pairs, in traversal
/// order. Failed and passing turns are both included.
pub fn extract_single_turn_pairs(
    trajectories: &[Trajectory],
    bundles: &BundleIndex,
) -> Result<Vec<TrainingTurn>, ExtractError> {
    let mut turns = Vec::new();
    for trajectory in trajectories {
        if trajectory.feedback_source != FeedbackSource::RealExecution {
            return Err(ExtractError::SourceMismatch {
                trajectory_id: trajectory.trajectory_id.clone(),
            });
        }
        let bundle = bundles
            .by_digest(&trajectory.bundle_digest)
            .ok_or_else(|| ExtractError::UnknownBundle {
                digest: trajectory.bundle_digest.clone(),
            })?;
        for turn in &trajectory.turns {
            if turn.observation.source != ObservationSource::Real {
                return Err(ExtractError::SourceMismatch {
                    trajectory_id: trajectory.trajectory_id.clone(),
                });
            }
            turns.push(TrainingTurn {
                domain: bundle.domain,
                bundle_digest: trajectory.bundle_digest.clone(),
                bundle_features: BundleFeatures::of(bundle),
                code: turn.code.clone(),
                true_observation: turn.observation.clone(),
            });
        }
    }
    Ok(turns)
}

/// Training hyperparameters for full-batch gradient descent.
#[derive(Debug, Clone, Copy)]
pub struct TrainHyper<S: Scalar> {
    pub learning_rate: S,
    pub epochs: usize,
    pub l2: S,
    pub seed: u64,
}

impl<S: Scalar> Default for TrainHyper<S> {
    fn default() -> Self {
        TrainHyper {
            learning_rate: S::from_f64_lossy(0.5),
            epochs: 150,
            l2: S::from_f64_lossy(1e-4),
            seed: 7,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyTrainingSet,

    #[error("hyperparameter `{name}` must be positive")]
    InvalidHyper { name: &'static str },

    #[error("training turn for bundle `{bundle_digest}` is not a real observation")]
    SourceMismatch { bundle_digest: String },
}

/// Trained proxy parameters: frozen vocabulary, per-label weights and biases,
/// and the manifest of (bundle digest, code hash) keys the model was fit on.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldModelParameters<S: Scalar> {
    pub version: u32,
    pub vocabulary: Vocabulary,
    pub weights: Weights<S>,
    pub training_digest: String,
    pub training_keys: BTreeSet<String>,
}

impl<S: Scalar> WorldModelParameters<S> {
    /// Retrain on a new turn set; the version strictly increases.
    pub fn retrained(
        &self,
        turns: &[TrainingTurn],
        hyper: &TrainHyper<S>,
    ) -> Result<WorldModelParameters<S>, TrainError> {
        train_inner(turns, hyper, self.version + 1).map(|(params, _)| params)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), io::SaveError> {
        io::save(self, path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ParamsError> {
        io::load(path)
    }

    pub fn to_file_string(&self) -> String {
        io::to_file_string(self)
    }

    pub fn from_file_string(text: &str) -> Result<Self, ParamsError> {
        io::from_file_string(text)
    }

    /// True when any of the given turns overlaps the training manifest.
    pub fn contains_turn(&self, turn: &TrainingTurn) -> bool {
        self.training_keys.contains(&turn.key())
    }
}

fn build_dataset<S: Scalar>(turns: &[TrainingTurn], vocabulary: &Vocabulary) -> Dataset<S> {
    let rows = turns
        .iter()
        .map(|turn| {
            let vector = featurize::<S>(
                turn.domain,
                &turn.bundle_features,
                &turn.code,
                vocabulary,
            );
            SparseRow {
                features: vector.iter().collect(),
                label: turn.true_observation.label.index(),
            }
        })
        .collect();
    Dataset {
        rows,
        feature_count: vocabulary.feature_count(),
    }
}

fn train_inner<S: Scalar>(
    turns: &[TrainingTurn],
    hyper: &TrainHyper<S>,
    version: u32,
) -> Result<(WorldModelParameters<S>, Vec<S>), TrainError> {
    if turns.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    if hyper.learning_rate <= S::zero() {
        return Err(TrainError::InvalidHyper {
            name: "learning_rate",
        });
    }
    if hyper.epochs == 0 {
        return Err(TrainError::InvalidHyper { name: "epochs" });
    }
    if hyper.l2 < S::zero() {
        return Err(TrainError::InvalidHyper { name: "l2" });
    }
    for turn in turns {
        if turn.true_observation.source != ObservationSource::Real {
            return Err(TrainError::SourceMismatch {
                bundle_digest: turn.bundle_digest.clone(),
            });
        }
    }

    // Sort by (bundle_digest, code hash) so input order never matters.
    let mut sorted: Vec<&TrainingTurn> = turns.iter().collect();
    sorted.sort_by_key(|t| (t.bundle_digest.clone(), code_hash(&t.code)));
    let sorted_owned: Vec<TrainingTurn> = sorted.into_iter().cloned().collect();

    let vocabulary = Vocabulary::build(sorted_owned.iter().map(|t| t.code.as_str()));
    let dataset = build_dataset::<S>(&sorted_owned, &vocabulary);

    let mut weights = Weights::zeros(vocabulary.feature_count());
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    for w in &mut weights.w {
        *w = S::from_f64_lossy(rng.random_range(-0.01..0.01));
    }

    let mut losses = Vec::with_capacity(hyper.epochs);
    for _ in 0..hyper.epochs {
        let grad = gradient(&dataset, &weights, hyper.l2);
        for (w, g) in weights.w.iter_mut().zip(grad.w.iter()) {
            *w -= hyper.learning_rate * *g;
        }
        for (b, g) in weights.b.iter_mut().zip(grad.b.iter()) {
            *b -= hyper.learning_rate * *g;
        }
        losses.push(loss(&dataset, &weights, hyper.l2));
    }

    let keys: Vec<String> = sorted_owned.iter().map(TrainingTurn::key).collect();
    let mut hasher = Sha256::new();
    for key in &keys {
        hasher.update(key.as_bytes());
        hasher.update(b"\n");
    }
    let training_digest = hex::encode(hasher.finalize());

    Ok((
        WorldModelParameters {
            version,
            vocabulary,
            weights,
            training_digest,
            training_keys: keys.into_iter().collect(),
        },
        losses,
    ))
}

/// Full-batch gradient descent on the convex objective. Deterministic given
/// the seed and the (sorted) input set; returns version 1 parameters.
pub fn train<S: Scalar>(
    turns: &[TrainingTurn],
    hyper: &TrainHyper<S>,
) -> Result<WorldModelParameters<S>, TrainError> {
    train_inner(turns, hyper, 1).map(|(params, _)| params)
}

/// Like [`train`], also returning the post-update loss after each epoch.
pub fn train_traced<S: Scalar>(
    turns: &[TrainingTurn],
    hyper: &TrainHyper<S>,
) -> Result<(WorldModelParameters<S>, Vec<S>), TrainError> {
    train_inner(turns, hyper, 1)
}

/// Per-label diagnostic templates with per-(domain, label) overrides.
/// `{token}` interpolates the highest-weight active token.
#[derive(Debug, Clone)]
pub struct DiagnosticTemplates {
    defaults: BTreeMap<OutcomeLabel, String>,
    overrides: BTreeMap<(Domain, OutcomeLabel), String>,
}

impl Default for DiagnosticTemplates {
    fn default() -> Self {
        let mut defaults = BTreeMap::new();
        defaults.insert(OutcomeLabel::Pass, String::new());
        defaults.insert(
            OutcomeLabel::CompilationError,
            "compilation failed near '{token}'".to_string(),
        );
        defaults.insert(
            OutcomeLabel::MemoryFault,
            "memory request exceeds limit near '{token}'".to_string(),
        );
        defaults.insert(
            OutcomeLabel::GeometryError,
            "geometry check failed near '{token}'".to_string(),
        );
        defaults.insert(
            OutcomeLabel::WrongOutput,
            "output mismatch near '{token}'".to_string(),
        );
        defaults.insert(
            OutcomeLabel::Timeout,
            "step limit exceeded near '{token}'".to_string(),
        );
        defaults.insert(
            OutcomeLabel::BackendUnavailable,
            "backend unavailable".to_string(),
        );
        DiagnosticTemplates {
            defaults,
            overrides: BTreeMap::new(),
        }
    }
}

impl DiagnosticTemplates {
    pub fn with_override(
        mut self,
        domain: Domain,
        label: OutcomeLabel,
        template: impl Into<String>,
    ) -> Self {
        self.overrides.insert((domain, label), template.into());
        self
    }

    fn render(&self, domain: Domain, label: OutcomeLabel, token: &str) -> String {
        let template = self
            .overrides
            .get(&(domain, label))
            .or_else(|| self.defaults.get(&label))
            .cloned()
            .unwrap_or_default();
        template.replace("{token}", token)
    }
}

/// A predicted observation plus the full label distribution.
#[derive(Debug, Clone)]
pub struct WorldModelPrediction<S: Scalar> {
    pub observation: Observation,
    /// Probabilities aligned with [`OutcomeLabel::ALL`]; they sum to one.
    pub label_scores: [S; LABEL_COUNT],
}

/// Predict from explicit features; `predict` derives them from the bundle.
pub fn predict_from_features<S: Scalar>(
    params: &WorldModelParameters<S>,
    domain: Domain,
    bundle_features: &BundleFeatures,
    code: &str,
) -> WorldModelPrediction<S> {
    predict_with_templates(
        params,
        domain,
        bundle_features,
        code,
        &DiagnosticTemplates::default(),
    )
}

pub fn predict_with_templates<S: Scalar>(
    params: &WorldModelParameters<S>,
    domain: Domain,
    bundle_features: &BundleFeatures,
    code: &str,
    templates: &DiagnosticTemplates,
) -> WorldModelPrediction<S> {
    let vector = featurize::<S>(domain, bundle_features, code, &params.vocabulary);
    let sparse: Vec<(u32, S)> = vector.iter().collect();
    let label_scores = softmax(&params.weights.scores(&sparse));

    // Argmax with ties broken by the fixed enum order.
    let mut best = 0usize;
    for (i, score) in label_scores.iter().enumerate() {
        if *score > label_scores[best] {
            best = i;
        }
    }
    let label = OutcomeLabel::from_index(best).unwrap();

    // Highest-weight active vocabulary token under the predicted label;
    // ties break toward the lexicographically smallest token.
    let mut top_token = "input".to_string();
    let mut top_weight = S::neg_infinity();
    for (token, id) in params.vocabulary.known_code_tokens(code) {
        let weight = params.weights.weight(label, id);
        if weight > top_weight {
            top_weight = weight;
            top_token = token;
        }
    }
    let diagnostic = templates.render(domain, label, &top_token);

    WorldModelPrediction {
        observation: Observation {
            label,
            diagnostic,
            numeric_outputs: None,
            diff_summary: None,
            wall_time_ms: 0,
            source: ObservationSource::Simulated,
        },
        label_scores,
    }
}

/// Predict the observation a real backend would return for (bundle, code).
/// Pure in (params, bundle content, code).
pub fn predict<S: Scalar>(
    params: &WorldModelParameters<S>,
    bundle: &EnvironmentBundle,
    code: &str,
) -> WorldModelPrediction<S> {
    predict_from_features(params, bundle.domain, &BundleFeatures::of(bundle), code)
}

/// A trained model behind the execution-oracle interface: one forward pass
/// per evaluation, every observation Simulated.
pub struct WorldModelEnv<S: Scalar> {
    params: Arc<WorldModelParameters<S>>,
    templates: DiagnosticTemplates,
}

impl<S: Scalar> WorldModelEnv<S> {
    pub fn new(params: Arc<WorldModelParameters<S>>) -> Self {
        WorldModelEnv {
            params,
            templates: DiagnosticTemplates::default(),
        }
    }

    pub fn with_templates(mut self, templates: DiagnosticTemplates) -> Self {
        self.templates = templates;
        self
    }

    pub fn params(&self) -> &WorldModelParameters<S> {
        &self.params
    }
}

impl<S: Scalar> ExecutionOracle for WorldModelEnv<S> {
    fn evaluate(&self, bundle: &EnvironmentBundle, code: &str) -> Observation {
        predict_with_templates(
            &self.params,
            bundle.domain,
            &BundleFeatures::of(bundle),
            code,
            &self.templates,
        )
        .observation
    }

    fn feedback_source(&self) -> FeedbackSource {
        FeedbackSource::WorldModel
    }
}

/// Wrap trained parameters as an execution oracle.
pub fn make_world_model_env<S: Scalar>(params: Arc<WorldModelParameters<S>>) -> WorldModelEnv<S> {
    WorldModelEnv::new(params)
}

/// A world-model stand-in that delegates to the real executor and re-stamps
/// observations as Simulated. Useful as the fidelity baseline: it reproduces
/// real labels exactly.
pub struct PassthroughEnv {
    executor: Arc<RealExecutor>,
}

impl PassthroughEnv {
    pub fn new(executor: Arc<RealExecutor>) -> Self {
        PassthroughEnv { executor }
    }
}

impl ExecutionOracle for PassthroughEnv {
    fn evaluate(&self, bundle: &EnvironmentBundle, code: &str) -> Observation {
        let mut observation = self.executor.evaluate(bundle, code);
        observation.source = ObservationSource::Simulated;
        observation
    }

    fn feedback_source(&self) -> FeedbackSource {
        FeedbackSource::WorldModel
    }
}
