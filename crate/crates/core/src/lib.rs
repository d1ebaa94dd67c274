//! Disentangled representations in two settings: a controller-function
//! network trained with noisy weight sharpening, and a variational
//! autoencoder trained on clamped mini-batches with invariance targeting.

pub mod cfn;
pub mod checkpoint;
pub mod error;
pub mod experiments;
pub mod gradcheck;
pub mod log;
pub mod nn;
pub mod optim;
pub mod params;
pub mod taskdata;
pub mod tensor;
pub mod vae;

pub use error::{Error, Result};
pub use log::ExperimentLog;
pub use params::{count_params, ParamStore};
pub use tensor::Tensor;
