//! Diffusion-model surprisal for audio clips and Wundt-curve analysis of
//! liking ratings.
//!
//! The pipeline runs audio through a log-mel front end ([`dsp`]), scores each
//! fixed-size spectrogram block with the variational bound of a small
//! ε-prediction diffusion model ([`diffusion`], [`denoiser`]), sums block
//! scores into per-clip surprisal ([`surprisal`]), and relates surprisal to
//! subject ratings with a random-intercept adjustment and a quadratic fit
//! ([`stats`]).

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod denoiser;
pub mod diffusion;
pub mod dsp;
pub mod error;
pub mod io;
pub mod rng;
pub mod stats;
pub mod surprisal;

pub use error::{Error, Result};
