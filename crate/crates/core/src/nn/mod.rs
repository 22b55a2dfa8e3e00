//! Dense network building blocks shared by the autoencoder, the ROI selector
//! and the classifier.

mod activation;
mod adam;
pub mod checkpoint;
mod dense;
mod gradcheck;
mod gumbel;
pub mod loss;

pub use activation::{activation_and_grad, sigmoid, softmax, Activation, ActivationGrad, SELU_ALPHA, SELU_LAMBDA};
pub use adam::{AdamConfig, AdamState};
pub use dense::{accumulate, scale_grads, ChannelMerge, Dense, DenseCache, Parameterized, Sequential};
pub use gradcheck::{block_error, gradient_check, relative_error};
pub use gumbel::{binary_concrete, binary_concrete_grad, hard_gate, GateMode, GateOutput, GumbelGate};
pub use loss::{cross_entropy_loss, mse_loss};
