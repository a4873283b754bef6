//! Patch-free training stack for whole-image binary segmentation.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`] and [`ops`]: rank-4 tensors and the fixed set of differentiable
//!   kernels (valid strided convolution, transposed convolution, ReLU, sigmoid,
//!   addition, binary cross-entropy), each with a hand-written backward pass.
//! * [`autodiff`]: an eager reverse-mode tape over those kernels that keeps an
//!   exact account of the bytes it holds.
//! * [`model`]: the seven-layer additive-skip U-Net family, the exhaustive
//!   search that recovers a 4492-parameter member of it, and forward passes.
//! * [`pipeline`]: input preprocessing, the tissue-label recipe with its
//!   morphology primitives, and a synthetic tissue generator.
//! * [`memplan`]: a liveness simulation predicting the peak resident bytes of
//!   one training step for any image size.
//! * [`train`]: Adam, BCE, Dice, the training loop with validation-based
//!   checkpoint selection, evaluation and benchmarking.
//! * [`io`]: raw image, tensor, checkpoint and log formats.

pub mod autodiff;
pub mod error;
pub mod io;
pub mod memplan;
pub mod model;
pub mod ops;
pub mod pipeline;
pub mod sysmem;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{Element, Shape, Tensor};
