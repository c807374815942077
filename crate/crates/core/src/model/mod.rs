//! Network architectures, the forward pass, the logistic loss and exact
//! per-layer gradients.

mod activation;
mod geometry;
mod network;
mod spec;

pub use activation::{sigmoid, Activation, EXP_CLAMP};
pub use geometry::{MapGeometry, Shape};
pub use network::{
    backward, batch_gradients, forward, gradients, init_weights, logistic_loss, loss_derivative,
    penultimate_activation, ForwardTrace, GradientSet, Hidden, Label, Weights,
};
pub(crate) use network::{backward_t, forward_t};
pub use spec::{LayerKind, LayerSpec, NetworkSpec};
