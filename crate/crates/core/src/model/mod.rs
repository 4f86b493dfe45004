//! Temporal convolutional network over pose sequences.

mod file;
mod infer;
mod net;
mod params;
mod tensor;
mod train;

use ndarray::NdFloat;
use num_traits::FromPrimitive;

/// Float element type of network tensors.
pub trait Real: NdFloat + FromPrimitive {}

impl<T: NdFloat + FromPrimitive> Real for T {}

pub use file::Model;
pub use infer::{calibrate_theta, default_theta, extract_events, infer_video, theta_grid};
pub use net::{calibrate_bn, forward, huber, loss_and_grads, BatchStats, Gradients, Mode, BN_EPS};
pub use params::{Arch, TcnParams, TensorSpec};
pub use tensor::{conv1d_valid, receptive_field};
pub use train::{batch_matrices, evaluate_loss, train, Adam, TrainConfig, TrainOutcome};
