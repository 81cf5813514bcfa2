//! Small moving target detection in cluttered, moving scenes.
//!
//! The pipeline runs frame by frame through four layers: a Gaussian retina,
//! a band-pass lamina, rectifying and delaying medulla channels, and a lobula
//! stage where a small-target correlator is corrected by feedback. The
//! feedback strategy is chosen by name at runtime (`none`, `time-delay`,
//! `spatio-temporal`); the spatio-temporal strategy shifts past detector
//! output along the background trajectory estimated by a bank of
//! velocity-tuned wide-field correlators.

pub mod config;
pub mod early_vision;
pub mod error;
pub mod evalkit;
pub mod experiments;
pub mod frame;
pub mod kernels;
pub mod lptc;
pub mod pgm;
pub mod pipeline;
pub mod stmd;
pub mod synthgen;

pub use config::ModelConfig;
pub use error::{Error, Result};
pub use frame::Frame;
pub use pipeline::{Pipeline, StepOutput};
pub use stmd::FeedbackMode;
