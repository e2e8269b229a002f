pub mod autodiff;
pub mod data;
pub mod diffusion;
pub mod equivariance;
pub mod error;
mod gauss;
pub mod gp;
pub mod metrics;
pub mod numerics;
pub mod rectified;
pub mod stack;
pub mod train;

pub use error::{Error, Result};
pub use numerics::{Rng, Tensor};
