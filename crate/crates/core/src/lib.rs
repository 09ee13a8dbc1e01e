//! Sign-agnostic implicit surface learning at desk scale.

pub mod autodiff;
pub mod config;
pub mod diagnostics;
pub mod geometry;
pub mod nn;
pub mod reconstruct;
pub mod rng;
pub mod sdfield;
pub mod training;
