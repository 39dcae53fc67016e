//! The joint-intent bottleneck and diffusion action head: DDPM-trained,
//! DDIM-sampled, distilled in-loop from the frozen teacher, and used to
//! export mean-code latent trajectories for the chunk generator.

mod distill;
mod policy;
mod schedule;

pub use distill::{
    collect_distill_buffer, distill_train, distill_update, export_latents, ActError, DistillBuffer,
    DistillLogRow, LatentTrajectory, TeacherSource,
};
pub use policy::{
    kl_gaussian, kl_gaussian_tensor, sample_intent, ActConfig, ActPolicy, DecodeNoise, IntentPosterior,
};
pub use schedule::{cosine_alpha_bar, ddim_step, ddpm_noise, NoiseSchedule};
