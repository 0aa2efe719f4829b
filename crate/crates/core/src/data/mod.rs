//! Scripted experts, demonstration collection and storage, window sampling
//! and augmentation.

mod collect;
mod expert;
mod store;
mod window;

pub use collect::{collect, collect_to_dir, CollectStats};
pub use expert::{expert_action, expert_grid, expert_point, grid_move, PdGains};
pub use store::{ArrayMeta, DemoStore, Manifest, StoredDType, FORMAT_VERSION};
pub use window::{augment, flip_window, sample_window, shift_frames, transpose_window, vflip_window, AugmentConfig, WindowSample};
