//! Inference-time fairness guardrail for tabular binary classifiers.
//!
//! The pipeline wraps an arbitrary black-box scorer: for each test instance it
//! flips the protected attribute, checks whether the rounded prediction
//! changes, and if so balances the original score against predictions on the
//! nearest synthetic instances drawn from the opposite protected group. The
//! crate also ships the fairness-metric suite (equalized odds, disparate
//! impact, accuracy, flips), two post-processing baselines (reject option and
//! group thresholds), and a k-fold experiment harness with report emission.

pub mod baselines;
pub mod classifier;
pub mod dataset;
pub mod generator;
pub mod guardrail;
pub mod harness;
pub mod metrics;

pub use classifier::{ForestConfig, ForestModel, Predictor};
pub use dataset::{Dataset, Instance, Schema, Standardizer, Value};
pub use generator::{NativeSampler, SyntheticPool};
pub use guardrail::{GuardedPrediction, GuardrailConfig, PoolPair};
pub use harness::{ExperimentConfig, FairnessReport};
pub use metrics::round_half_up;
