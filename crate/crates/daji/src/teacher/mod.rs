//! Privileged tracking teacher: the reference-tracking environment, a
//! PPO + GAE trainer over it, and the deterministic scripted oracle used
//! for dataset validation and as a fast distillation source.

mod env;
mod gae;
mod oracle;
mod policy;
mod ppo;

pub use env::{state_from_frame, StepOutcome, TrackingEnv};
pub use gae::gae;
pub use oracle::{oracle_teacher, oracle_teacher_with, ORACLE_LOOKAHEAD};
pub use policy::{TeacherConfig, TeacherPolicy};
pub use ppo::{collect_rollout, entropy_coef, ppo_update, train_teacher, PpoConfig, PpoStats, RolloutBuffer, TrainLogRow};

#[derive(Debug, thiserror::Error)]
pub enum TeacherError {
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("non-finite loss during PPO update: {0}")]
    NonFiniteLoss(String),
    #[error("training diverged: mean reward {reward:.3} below floor {floor:.3} for {buffers} buffers")]
    Diverged { reward: f64, floor: f64, buffers: usize },
}
