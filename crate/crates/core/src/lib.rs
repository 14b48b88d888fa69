//! Reference-guided subject generation by completing a mosaic of panels.

pub mod ablation;
pub mod cascade;
pub mod condition;
pub mod denoiser;
pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod prompting;
pub mod sampler;
pub mod synth;

pub use error::{Error, Result};
