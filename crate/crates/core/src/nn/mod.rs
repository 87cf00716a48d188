//! Small differentiable-network toolkit: dense layers with explicit backward
//! passes, log-losses, an adaptive-moment optimizer, reparameterized Gaussian
//! sampling, straight-through Gumbel-softmax and a checkpoint container.
//!
//! Batches are `ndarray::Array2<f64>` with one example per row.

pub mod checkpoint;
pub mod dense;
pub mod gradcheck;
pub mod loss;
pub mod optim;
pub mod sample;

pub use checkpoint::Checkpoint;
pub use dense::{sigmoid, Activation, Dense, DenseNet, ForwardCache, Gradients};
pub use loss::{bce_grad, bce_loss, clamp_prob, softmax_ce_batch, softmax_ce_loss, PROB_EPS};
pub use optim::{Adam, AdamConfig};
pub use sample::{
    reparameterize, reparameterize_with_noise, st_gumbel_softmax, st_gumbel_softmax_with_noise,
    GumbelSample, Reparam,
};
