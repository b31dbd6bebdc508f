//! Self-supervised image denoising with a blind-spot dilated-convolution
//! network.
//!
//! The crate bundles a small reverse-mode autodiff engine ([`autodiff`],
//! [`conv`]), the network builder ([`network`]), noise models with the
//! Gaussian likelihood and posterior fusion ([`noise`]), training with
//! checkpointing ([`train`], [`checkpoint`]) and evaluation ([`eval`]).

pub mod autodiff;
pub mod checkpoint;
pub mod conv;
pub mod data;
pub mod error;
pub mod eval;
pub mod imageio;
pub mod kv;
pub mod linalg;
pub mod network;
pub mod noise;
pub mod optim;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, ScalarObjective, Tape, Var};
pub use conv::{conv2d, KernelMask};
pub use error::{CheckpointError, Error, Result};
pub use network::{
    assert_blind_spot, build_network, rf_half, GaussianPredictionMap, Network, NetworkConfig,
};
pub use noise::{corrupt, NoiseModel};
pub use tensor::{Shape, Tensor};
