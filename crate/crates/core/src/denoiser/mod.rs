//! Velocity predictors: closed-form Gaussian oracles and the trainable toy model.

pub mod analytic;
pub mod checkpoint;
pub mod model;
pub mod toy;
pub mod train;

pub use analytic::{gaussian_velocity, isotropic_velocity, CorrelatedGaussian, IsotropicGaussian};
pub use checkpoint::Checkpoint;
pub use model::{CapturedAttention, CascadeSpec, Model, ToyModelConfig};
pub use toy::ToyDenoiser;
pub use train::{SampleSource, TrainConfig, TrainSample, Trainer};
