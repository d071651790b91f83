//! Dual-branch masked autoencoder over point patches and image patches.

mod checkpoint;
mod config;
mod layers;
mod model;

pub use checkpoint::{Checkpoint, CheckpointTensor};
pub use config::MaeConfig;
pub use model::{
    patchify, reconstruct_full_cloud, reconstruct_full_cloud_var, DualMae, LossMask, Stage1Example, Stage1Losses, Stage1Out,
};
