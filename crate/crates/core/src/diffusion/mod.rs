//! Noise schedules, forward noising, the ε-prediction loss and ancestral
//! sampling.

mod ddpm;
mod schedule;

pub use ddpm::{
    add_noise, add_noise_rows, ddpm_step, sample, sample_batch, training_loss, DiffusionBatch,
    LossOutput, NoisePredictor,
};
pub use schedule::{make_schedule, NoiseSchedule, ScheduleDescriptor, ScheduleKind};
