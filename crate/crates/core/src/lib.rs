//! Desk-scale door opening and traversal: a deterministic planar simulator,
//! a scripted IK+MPC demonstrator, and an end-to-end diffusion visuomotor
//! policy trained from those demonstrations.
//!
//! The crate is organized around the pipeline stages:
//!
//! - [`numerics`] — dense tensors, reverse-mode autodiff, Adam, checkpoints
//! - [`worldsim`] — fixed-step planar world: base, arms, damped latched door
//! - [`expert`] — stage machine combining damped-least-squares IK and iLQR MPC
//! - [`dataset`] — demonstration collection, on-disk format, window sampling
//! - [`diffusion`] — noise schedule, FiLM-conditioned 1-D U-Net, training,
//!   sampling, receding-horizon execution
//! - [`evalbench`] — rollout evaluation, ablation grid, disturbance recovery,
//!   latency benchmarks
//! - [`config`] — merged run configuration with TOML loading

pub mod config;
pub mod dataset;
pub mod diffusion;
pub mod evalbench;
pub mod expert;
pub mod numerics;
pub mod util;
pub mod worldsim;
