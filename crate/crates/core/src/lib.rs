//! Deformable inter-task self-attention (ITSA) for multitask dense prediction.
//!
//! The crate provides a small dense [`Tensor`] type, differentiable building
//! blocks with hand-written vector-Jacobian products, the multi-map deformable
//! attention kernel, the full ITSA interaction block together with a global
//! MHSA baseline, a closed-form FLOPs model and a finite-difference gradient
//! checker.

pub mod block;
pub mod deform;
pub mod error;
pub mod flops;
mod gemm;
pub mod gradcheck;
pub mod nn;
pub mod params;
pub mod rng;
pub mod tensor;

pub use block::{
    ItsaConfig, ItsaParams, MhsaBaselineParams, PeRows, DownsampleMode, GradScaleScope,
};
pub use error::{Error, Result};
pub use params::ParamSet;
pub use rng::RngState;
pub use tensor::Tensor;
