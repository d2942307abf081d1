//! Data engine for execution-grounded code-correction trajectories.
//!
//! The pipeline has two phases. Phase one synthesizes multi-turn trajectories
//! by looping a generator against a real execution backend (an external
//! toolchain adapter or the built-in MiniLang reference backend) and records
//! structured observations. Phase two trains a learned execution proxy on the
//! collected turns, re-runs the same loop against the proxy to amplify the
//! corpus, and audits proxy fidelity against real execution.
//!
//! Modules map onto the pipeline stages:
//!
//! - [`envstore`]: task seeds, environment bundles, prompt routing
//! - [`backends`]: real execution, diagnostics parsing, batch dispatch
//! - [`generator`]: scripted and remote (reasoning, code) producers
//! - [`traj_loop`]: the elicitation-execution-feedback loop
//! - [`icwm`]: the learned execution proxy (generic over [`scalar::Scalar`])
//! - [`audit`]: fidelity measurement and spot-check audit rounds
//! - [`corpus`]: provenance-tracked corpus assembly, stats, persistence

pub mod audit;
pub mod backends;
pub mod corpus;
pub mod envstore;
pub mod generator;
pub mod icwm;
pub mod scalar;
pub mod traj_loop;

pub use scalar::Scalar;

/// Scalar type used by the shipped binaries and the concrete aliases below.
pub type DefaultScalar = f64;

/// Trained proxy parameters at the default precision.
pub type WorldModel = icwm::WorldModelParameters<DefaultScalar>;
/// Single-precision proxy parameters.
pub type WorldModel32 = icwm::WorldModelParameters<f32>;
/// Proxy prediction at the default precision.
pub type Prediction = icwm::WorldModelPrediction<DefaultScalar>;
/// Training hyperparameters at the default precision.
pub type TrainConfig = icwm::TrainHyper<DefaultScalar>;
