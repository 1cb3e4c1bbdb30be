//! Dual-branch denoiser, its parameters and checkpoints.

mod checkpoint;
mod config;
mod layers;
mod model;
pub mod params;

pub use checkpoint::Checkpoint;
pub use config::{FmimConfig, NetworkConfig, Variant};
pub use layers::{norm_groups, timestep_embedding, upsample_nearest2};
pub use model::{ConditionBundle, SsdiffNet, SITE_LEVELS};
pub use params::{Ctx, Group, ParamStore};
