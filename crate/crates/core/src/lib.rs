//! KutralNet: portable fire-recognition convolutional networks.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`] and [`autograd`]: dense NCHW storage and a reverse-mode tape.
//! - [`nn`]: convolution, batch-norm, activation, pooling, linear and loss kernels.
//! - [`octave`]: octave convolution over high/low frequency feature pairs.
//! - [`model`]: graph representation, block builders, the four named
//!   architectures and the binary checkpoint format.
//! - [`cost`]: static parameter and flop accounting.
//! - [`data`]: manifests, splits, black-image augmentation and preprocessing.
//! - [`train`]: cross-entropy training with Adam, evaluation, ROC/AUROC.

pub mod autograd;
pub mod cost;
pub mod data;
pub mod error;
mod gemm;
pub mod model;
pub mod nn;
pub mod octave;
pub mod params;
pub mod tensor;
pub mod train;

pub use autograd::{BackwardReport, Tape, Var};
pub use error::{Error, Result};
pub use model::{build_model, build_variant, Mode, ModelConfig, ModelGraph, Variant};
pub use params::{ParamId, ParamStore};
pub use tensor::{Element, Shape, Tensor};
