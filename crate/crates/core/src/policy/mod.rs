//! Observation encoders, conditional denoisers, action normalization and
//! the receding-horizon controller.

mod denoiser;
mod encoder;
mod film;
mod horizon;
mod model;
mod normalizer;
mod ops;
mod runner;
mod train;
mod unet;

pub use denoiser::{
    Denoiser, DenoiserArch, DenoiserCache, DenoiserConfig, StepCondCache, StepCondEmbedding,
};
pub use encoder::{Encoder, EncoderCache, EncoderConfig, EncoderMode, ObsBatch};
pub use film::{FilmMlp, FilmMlpCache};
pub use horizon::HorizonConfig;
pub use model::{BundleMeta, ModelConfig, ModelShape, PolicyBundle, PolicyModel};
pub use normalizer::{Normalizer, DEGENERATE_RANGE};
pub use runner::{
    evaluate, history_batch, run_closed_loop, run_closed_loop_batch, DiffusionPlanner, EpisodeResult,
    ExpertPlanner, ObsHistory, Planner,
};
pub use train::{fit_action_normalizer, TrainConfig, Trainer};
pub use unet::{Unet1d, UnetCache};
