//! DAJI on a planar biped surrogate: a privileged teacher is distilled into
//! a deployable joint-intent policy (DAJI-Act), whose latent space is then
//! generated autoregressively from instructions by a flow-matching model
//! (DAJI-Flow) and executed as a two-rate streaming pipeline.

pub mod act;
pub mod config;
pub mod deploy;
pub mod eval;
pub mod flow;
pub mod io;
pub mod numerics;
pub mod sim;
pub mod teacher;
