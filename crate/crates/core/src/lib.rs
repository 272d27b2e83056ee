//! Desk-scale TinyML toolkit.
//!
//! The crate covers the whole embedded-ML workflow on a workstation:
//! dataset ingestion ([`project`]), feature extraction ([`dsp`]), a small
//! operator-graph IR ([`ir`]), training ([`trainer`]), post-training int8
//! quantization ([`quant`]), a reference interpreter with a static arena
//! planner ([`interp`]), C source generation ([`codegen`]), a parametric
//! device cost model ([`estimate`]), random-search tuning under resource
//! constraints ([`tuner`]) and streaming post-processing calibration
//! ([`calibrate`]).

pub mod calibrate;
pub mod codegen;
pub mod dsp;
pub mod error;
pub mod estimate;
pub mod interp;
pub mod ir;
pub mod project;
pub mod quant;
pub mod rng;
pub mod synth;
pub mod trainer;
pub mod tuner;

pub use error::{Error, Result};
