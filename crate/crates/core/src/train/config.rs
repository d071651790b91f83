use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gsplat::GsHyper;
use crate::mae::MaeConfig;

/// Synthetic dataset used when no data directory is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub scenes: usize,
    pub views_per_scene: usize,
    pub points_per_scene: usize,
    pub focal: f64,
    pub random_boxes: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            scenes: 4,
            views_per_scene: 3,
            points_per_scene: 8192,
            focal: 90.0,
            random_boxes: 3,
        }
    }
}

/// Everything a training run needs; mirrors the TOML config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: u8,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Fraction of the (seed-shuffled) example list to train on.
    pub fraction: f64,
    /// Splatting iterations per scene in stage 2.
    pub gs_iters: usize,
    /// Weight of the splatting image loss in the branch loss.
    pub alpha: f64,
    /// Weight of the splatting point loss in the branch loss.
    pub beta: f64,
    /// SSIM weight of the splatting image loss.
    pub lambda: f64,
    /// Checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    pub seed: u64,
    pub mae: MaeConfig,
    pub gs: GsHyper,
    pub synthetic: SyntheticConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: 1,
            epochs: 50,
            lr: 1e-3,
            weight_decay: 0.05,
            batch_size: 1,
            fraction: 1.0,
            gs_iters: 500,
            alpha: 1.0,
            beta: 1.0,
            lambda: 0.2,
            checkpoint_every: 10,
            seed: 0,
            mae: MaeConfig::default(),
            gs: GsHyper::default(),
            synthetic: SyntheticConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Stage-2 defaults: a single epoch at a tenth of the stage-1 learning
    /// rate.
    pub fn stage2() -> Self {
        Self {
            stage: 2,
            epochs: 1,
            lr: 1e-4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.stage == 1 || self.stage == 2) {
            return bad(format!("stage must be 1 or 2, got {}", self.stage));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be non-negative, got {}", self.lr));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return bad(format!("fraction must lie in (0, 1], got {}", self.fraction));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.synthetic.scenes == 0 || self.synthetic.views_per_scene == 0 {
            return bad("synthetic dataset needs at least one scene and view".into());
        }
        self.mae.validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
