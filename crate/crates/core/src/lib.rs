//! Neural inertial navigation on a from-scratch autograd core.
//!
//! The pipeline turns windows of raw IMU samples into velocity estimates with
//! a 1D convolutional network, integrates those velocities into a trajectory,
//! and scores the result against ground truth:
//!
//! - [`tensor`] and [`autograd`]: dense `f64` tensors and reverse-mode AD.
//! - [`layers`]: 1D convolution, batch norm, pooling, dense layers and the
//!   residual blocks, including the depthwise-separable [`layers::MobileResNetBlock`].
//! - [`arch`]: IMUNet, ResNet18-1D and MobileNet-1D plus parameter/FLOP accounting.
//! - [`data`]: quaternions, the canonical CSV dataset, resampling, windowing and
//!   a synthetic IMU generator with known ground truth.
//! - [`train`]: MSE loss, Adam, the training loop and checkpoints.
//! - [`nav`]: velocity/acceleration integration and ATE/RTE.
//! - [`experiment`]: the desk-scale train/evaluate comparison against double integration.
//! - [`cli`]: the `imunet` command line (`synth`, `train`, `eval`, `flops`).

pub mod arch;
pub mod autograd;
pub mod cli;
pub mod data;
pub mod experiment;
pub mod gradcheck;
pub mod layers;
pub mod nav;
pub mod tensor;
pub mod train;

pub use autograd::{Graph, Var};
pub use tensor::{Tensor, TensorError};
