//! Modulation classification laboratory: a flat-fading channel simulator,
//! polar and I–Q constellation rasterizers, a fourth-order cumulant
//! baseline, a small CNN engine, and a channel compensation network trained
//! end-to-end through a differentiable rasterizer.

pub mod ccn;
pub mod cumulants;
pub mod error;
pub mod features;
pub mod harness;
pub mod metrics;
pub mod modem;
pub mod neuralnet;
pub mod seed;

pub use error::{AmcError, Result};
