//! Evaluation suite: contrastive text-motion evaluator, feature-space
//! metrics (MM-D, R-precision, FID, Diversity, MultiModality), transition
//! and execution metrics, and latent diagnostics.

pub mod evaluator;
pub mod linalg;

pub use evaluator::{
    diversity, fid, motion_summary, multimodality, retrieval_metrics, train_evaluator, EvalConfig,
    EvalError, Evaluator, FeatureSet, RetrievalMetrics,
};
pub mod motion_metrics;

pub use motion_metrics::{
    execution_metrics, extract_transition, jerk, transition_metrics, ExecutionMetrics,
    TransitionClip, TransitionMetrics, TRANSITION_HALF,
};
pub mod probe;

pub use probe::{fixed_horizon_success, latent_corr, probe_future, ProbeReport, ProbeSeq};
