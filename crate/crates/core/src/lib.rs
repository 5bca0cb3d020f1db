//! Core numerics for music-driven group choreography with a conditional
//! diffusion model.
//!
//! Everything in this crate is pure computation over owned buffers and
//! needs only `alloc`: motion representation and forward kinematics, a
//! small reverse-mode differentiation tape, the group dance denoiser and
//! footwork adaptor, the diffusion schedule and samplers (including the
//! overlapping-window long-sequence extension), the training objective,
//! the evaluation metrics and a synthetic choreography corpus.
//!
//! File formats, checkpoints and the command-line driver live in the
//! `choreo` crate.

#![no_std]
#![deny(unsafe_code)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod denoiser;
pub mod diffusion;
pub mod error;
pub mod footwork;
pub mod lgds;
pub mod losses;
pub mod math;
pub mod metrics;
pub mod model;
pub mod motion;
pub mod music;
pub mod params;
pub mod ssm;
pub mod synth;
pub mod tensor;
pub mod train;

pub use error::{CoreError, Result};
pub use motion::{DancerPermutation, GroupMotion, MotionFrame, SkeletonSpec};
pub use music::MusicTrack;
pub use tensor::Tensor;
