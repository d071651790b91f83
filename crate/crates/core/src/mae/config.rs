use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Network shape and masking settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaeConfig {
    /// Token width shared by both branches.
    pub embed_dim: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub branch_depth: usize,
    pub shared_depth: usize,
    pub shared_decoder_depth: usize,
    pub decoder_depth: usize,
    /// Hidden width of the per-point tokenizer MLP.
    pub pointnet_hidden: usize,
    pub mask_ratio: f64,
    pub num_points: usize,
    pub num_patches: usize,
    pub patch_size: usize,
    pub patch_px: usize,
    pub image_width: usize,
    pub image_height: usize,
}

impl Default for MaeConfig {
    fn default() -> Self {
        Self {
            embed_dim: 96,
            heads: 4,
            mlp_ratio: 2,
            branch_depth: 2,
            shared_depth: 2,
            shared_decoder_depth: 1,
            decoder_depth: 1,
            pointnet_hidden: 64,
            mask_ratio: 0.6,
            num_points: 2048,
            num_patches: 64,
            patch_size: 32,
            patch_px: 16,
            image_width: 128,
            image_height: 96,
        }
    }
}

impl MaeConfig {
    /// Scaled-down network for quick tests.
    pub fn tiny() -> Self {
        Self {
            embed_dim: 32,
            heads: 2,
            branch_depth: 1,
            shared_depth: 1,
            pointnet_hidden: 32,
            num_points: 512,
            num_patches: 32,
            patch_size: 16,
            patch_px: 8,
            image_width: 32,
            image_height: 32,
            ..Self::default()
        }
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.image_height / self.patch_px, self.image_width / self.patch_px)
    }

    pub fn image_tokens(&self) -> usize {
        let (r, c) = self.grid();
        r * c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!("embed_dim {} not divisible by heads {}", self.embed_dim, self.heads));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return bad(format!("mask_ratio {} outside (0, 1)", self.mask_ratio));
        }
        if self.num_patches == 0 || self.patch_size == 0 || self.num_patches > self.num_points {
            return bad("need 0 < num_patches <= num_points and patch_size > 0".into());
        }
        if self.patch_size > self.num_points {
            return bad("patch_size exceeds num_points".into());
        }
        if self.patch_px == 0
            || self.image_width % self.patch_px != 0
            || self.image_height % self.patch_px != 0
            || self.image_width == 0
            || self.image_height == 0
        {
            return bad(format!(
                "{}x{} image does not split into {}px patches",
                self.image_width, self.image_height, self.patch_px
            ));
        }
        if self.mlp_ratio == 0 || self.pointnet_hidden == 0 {
            return bad("mlp widths must be positive".into());
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }
}
