//! Stereo disparity estimation with dilated dense blocks and local/global
//! context fusion, on top of a small reverse-mode tensor library.
//!
//! Layout:
//!
//! * [`tensor`] and [`autodiff`]: dense N-d arrays and the recorded graph.
//! * [`blocks`]: receptive-field arithmetic, dense blocks, SPP, correlation,
//!   warping and the context-fusion module.
//! * [`model`]: feature extraction, disparity estimation and refinement.
//! * [`train`]: losses, optimizer, metrics and the training loop.
//! * [`data`]: random-dot stereograms, PFM/PNM I/O, augmentation, loaders.
//! * [`checkpoint`]: the parameter container format.
//! * [`gradcheck`]: finite-difference suites shared by tests and the CLI.
//! * [`kv`]: the `key = value` text format used for configs and reports.

pub mod autodiff;
pub mod blocks;
pub mod checkpoint;
pub mod data;
pub mod error;
mod gemm;
pub mod gradcheck;
pub mod kv;
pub mod model;
pub mod params;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Graph, Var};
pub use error::{Error, ErrorKind, Result};
pub use tensor::{DType, Real, Tensor};
