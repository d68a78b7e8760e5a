//! Differentiable building blocks.
//!
//! Every layer has a forward function and a `*_vjp` that maps an upstream
//! gradient to gradients for the inputs and parameters. Backward passes
//! recompute whatever forward intermediates they need from the inputs.

mod activation;
mod bilinear;
mod conv;
mod dropout;
mod layernorm;
mod linear;
mod pe;
mod softmax;

pub use activation::{gelu, gelu_fwd, gelu_grad, gelu_vjp};
pub use bilinear::{bilinear_sample_fwd, bilinear_sample_vjp, BilinearGrads, BilinearTap};
pub use conv::{
    conv1x1_maxpool_fwd, conv1x1_maxpool_vjp, conv3x3s2_fwd, conv3x3s2_vjp, halved, ConvGrads,
    ConvParams, PoolGrads,
};
pub use dropout::{dropout, dropout_vjp, DropoutMask, Mode};
pub use layernorm::{layernorm_fwd, layernorm_vjp, LayerNormGrads, LayerNormParams};
pub use linear::{linear_fwd, linear_vjp, LinearGrads, LinearParams};
pub use pe::{sinusoidal_pe_2d, sinusoidal_pe_tasks};
pub use softmax::{softmax_fwd, softmax_in_place, softmax_vjp};

/// Rows per work item when a row-wise kernel is split across threads. Fixed,
/// so results do not depend on the thread count.
pub(crate) const ROW_CHUNK: usize = 128;
