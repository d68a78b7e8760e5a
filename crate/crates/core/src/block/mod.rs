//! The task interaction block: deformable ITSA and the global-MHSA baseline.

mod config;
mod itsa;
mod mhsa;
mod pyramid;

pub use config::{DownsampleMode, GradScaleScope, ItsaConfig, PeRows};
pub use itsa::{
    initial_queries, itsa_block_fwd, itsa_block_fwd_taped, itsa_block_vjp, ItsaGrads, ItsaParams,
    ItsaTape, StepParams, StepTape,
};
pub use mhsa::{mhsa_block_fwd, mhsa_queries_fwd, MhsaBaselineParams};
pub use pyramid::{build_pyramid, pyramid_vjp, DownsampleParams};
