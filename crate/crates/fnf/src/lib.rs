//! File formats, trace sources, experiments and networking around the
//! gateway core.

pub mod casas;
pub mod config;
pub mod experiment;
pub mod formats;
pub mod net;
pub mod run;
pub mod synth;
