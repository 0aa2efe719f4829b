//! Minimal numeric kernel: arrays, layers with analytic backward passes,
//! AdamW, EMA, finite-difference checking and checkpoints.
//!
//! There is no autodiff graph. Every layer exposes a forward function and a
//! backward function that consumes whatever the forward pass cached; models
//! compose them by hand.

mod activation;
mod array;
pub mod checkpoint;
mod conv;
mod ema;
mod embed;
mod gemm;
mod gradcheck;
mod init;
mod linear;
mod norm;
mod optim;
mod params;
mod scalar;

pub use activation::{activation, activation_backward, Activation};
pub use array::NdArray;
pub use checkpoint::Checkpoint;
pub use conv::{
    conv1d, conv1d_backward, conv2d, conv2d_backward, upsample1d, upsample1d_backward, Conv1d,
    Conv2d, ConvGrads, ConvSpec,
};
pub use ema::{ema_update, EmaState};
pub use embed::{sinusoidal_embed, sinusoidal_embed_batch, DEFAULT_MAX_PERIOD};
pub use gemm::gemm;
pub use gradcheck::{gradcheck, relative_error, GRADCHECK_ABS_FLOOR};
pub use init::Init;
pub use linear::{linear, linear_backward, Linear, LinearGrads};
pub use norm::{group_norm, group_norm_backward, GroupNorm, GroupNormCache, GroupNormGrads};
pub use optim::{adamw_step, LrSchedule, OptimConfig};
pub use params::{Param, ParamId, ParamStore};
pub use scalar::{DType, Scalar};
