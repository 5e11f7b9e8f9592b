//! Configurable denoising autoencoder for collaborative-filtering rating
//! prediction, with the experiment harness around it.
//!
//! The numeric core is generic over [`Scalar`]; training uses `f32` and the
//! gradient checks use `f64`. The aliases below name the two instantiations.

pub mod autoenc;
pub mod config;
pub mod data;
pub mod error;
pub mod nn;
pub mod optim;
pub mod scalar;
pub mod search;
pub mod trainer;

pub use autoenc::{FlexModel, LossReport, RowBatch};
pub use config::{ModelConfig, Pivot};
pub use error::{Error, Result};
pub use nn::{ActivationKind, DenseMatrix, RngStream};
pub use optim::OptimizerKind;
pub use scalar::Scalar;

pub type Matrix32 = DenseMatrix<f32>;
pub type Matrix64 = DenseMatrix<f64>;
pub type Model32 = FlexModel<f32>;
pub type Model64 = FlexModel<f64>;
pub type Batch32 = RowBatch<f32>;
pub type Batch64 = RowBatch<f64>;
