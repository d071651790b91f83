//! Two-stage pre-training: masked reconstruction first, then joint training
//! with per-scene Gaussian splatting.

mod config;
mod data;
mod evaluate;
mod render;
mod report;
mod stage1;
mod stage2;

pub use config::{SyntheticConfig, TrainConfig};
pub use data::{select_fraction, Dataset, SceneData};
pub use evaluate::{evaluate, EvalReport, SceneMetrics};
pub use render::{render_checkpoint, RenderOptions, RenderedView};
pub use report::{metric_value, LossReport, MetricsSink};
pub use stage1::{train_stage1, Stage1Run, Trainer};
pub use stage2::{reconstruct_gaussians, train_stage2, Stage2Run, Stage2Summary};

/// Derives an independent seed for the `index`-th use of `key` under a
/// root seed.
pub fn derive_seed(root: u64, key: &str, index: u64) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET;
    for b in key.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    splitmix(splitmix(root ^ h).wrapping_add(index))
}

fn splitmix(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Packs an epoch and a position into one seed index.
pub(crate) fn epoch_index(epoch: usize, i: usize) -> u64 {
    ((epoch as u64) << 32) | i as u64
}
