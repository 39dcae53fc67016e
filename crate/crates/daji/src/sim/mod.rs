//! Planar articulated-biped surrogate: spring-damper contact, PD joint
//! actuation, termination rules, procedural labeled reference motions,
//! observation builders and the exponential-kernel tracking reward.

mod biped;
mod clip;
mod dataset;
mod obs;
mod reward;

pub use biped::{check_termination, sim_step, BipedModel, SimConfig, SimState, Termination, N_JOINTS};
pub use clip::{Frame, MotionClip, Segment, CLIP_CHANNELS, FPS};
pub use dataset::{gen_reference_dataset, DatasetConfig, DatasetManifest, FamilyStats, MotionFamily, ReferenceDataset};
pub use obs::{
    build_observations, build_reference_obs, priv_width, prop_width, ObsBundle, ObsConfig, OffsetSet, OffsetVariant,
    SimHistory, PROP_BLOCK_OFFSETS, REF_FRAME_WIDTH,
};
pub use reward::{tracking_reward, RewardConfig, RewardTerms};
