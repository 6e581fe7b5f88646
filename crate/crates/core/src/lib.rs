//! Sliced-Wasserstein cross-modal transfer learning.
//!
//! A two-encoder ("Y-shaped") convolutional network maps a label-rich source
//! modality and a label-scarce target modality into one embedding space,
//! where the embedding distributions are aligned with a sliced Wasserstein
//! distance. Everything runs on a small reverse-mode tape in [`autodiff`].

pub mod autodiff;
pub mod data;
mod error;
pub mod losses;
pub mod nn;
pub mod parallel;
pub mod training;
mod tensor;

pub use error::{Error, Result};
pub use tensor::{DType, Tensor};
