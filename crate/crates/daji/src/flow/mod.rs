//! Language-conditioned latent chunk generator: flow matching over intent
//! sequences with a self-conditioning curriculum and autoregressive rollout.

pub mod model;
pub mod train;

pub use model::{
    flow_bucket, sample_flow_time, ConditionSeq, FlowConfig, FlowError, FlowModel, LatentChunk,
};
pub use train::{
    autoregressive_rollout, euler_integrate, flow_loss, generate_chunk, p_sc,
    self_conditioned_loss, train_flow, FlowLogRow, RolloutStats, SelfCondSchedule,
};
