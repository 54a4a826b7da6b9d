pub mod autodiff;
pub mod data;
pub mod ssm;
pub mod error;
pub mod gradsuite;
pub mod iss2d;
pub mod parallel;
pub mod self_prior;
pub mod srt;
pub mod tensor;
pub mod train;
pub mod unet;

pub use error::{Error, Result};
pub use tensor::{Float, Tensor};
