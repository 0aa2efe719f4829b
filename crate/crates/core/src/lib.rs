//! Diffusion-based visuomotor policy learning at desk scale.
//!
//! The crate is organized bottom-up:
//!
//! * [`nncore`]: arrays, layers with hand-written backward passes, AdamW, EMA,
//!   finite-difference gradient checking and the checkpoint format.
//! * [`diffusion`]: DDPM noise schedules, forward noising, the ε-prediction
//!   loss and ancestral sampling.
//! * [`policy`]: observation encoders, conditional denoisers (FiLM-MLP and a
//!   1D U-Net), action normalization and the receding-horizon controller.
//! * [`envs`]: procedurally generated grid and point-mass mazes with drift.
//! * [`data`]: scripted experts, the chunked demonstration store, window
//!   sampling and augmentation.

pub mod data;
pub mod diffusion;
pub mod envs;
mod error;
pub mod nncore;
pub mod policy;
pub mod rng;

pub use error::{Error, Result};
