//! Desk-scale laboratory for studying how uncertainty-driven active
//! learning interacts with group fairness.
//!
//! * [`autodiff`]: dense reverse-mode differentiation with dropout and a
//!   gradient-reversal layer.
//! * [`model`]: MLP with a task head and an adversarial group head.
//! * [`acquisition`]: BALD / entropy scores and query strategies.
//! * [`datagen`]: synthetic datasets with minority-group or
//!   sensitive-attribute bias.
//! * [`metrics`]: predictive parity, equalized odds, equal opportunity,
//!   NLL and the per-group epistemic gap.
//! * [`experiment`]: the labelling loop, seed aggregation, CSV and SVG
//!   output.

pub mod acquisition;
pub mod autodiff;
pub mod datagen;
pub mod experiment;
pub mod metrics;
pub mod model;

pub use acquisition::{AcquisitionScores, QueryBatch, Strategy};
pub use autodiff::{Graph, ParameterSet, Tensor};
pub use datagen::{BiasKind, Dataset, DatasetSpec, PoolState};
pub use experiment::{ExperimentConfig, ExperimentError, RunResult, StepRecord};
pub use metrics::{EvalBatch, FairnessReport};
pub use model::{McPredictions, Model, ModelConfig};
