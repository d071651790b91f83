use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::MaeConfig;
use super::layers::{Init, Linear, Mlp, Stack};
use crate::autodiff::{Graph, ParamId, ParamStore, Var};
use crate::camera::{align_patches, complementary_masks, CameraModel, MaskPair};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::pointcloud::{chamfer_var, downsample, fps_knn_patches, PatchSet, PointCloud};

/// Splits an image into `patch_px` squares, row-major over the grid, each
/// flattened `y, x, channel`.
pub fn patchify(img: &Image, patch_px: usize) -> Result<Vec<f64>> {
    if patch_px == 0 || img.width % patch_px != 0 || img.height % patch_px != 0 {
        return Err(Error::invalid(format!(
            "{}x{} image does not split into {patch_px}px patches",
            img.width, img.height
        )));
    }
    let mut out = Vec::with_capacity(img.data.len());
    for r in 0..img.height / patch_px {
        for c in 0..img.width / patch_px {
            out.extend(img.patch(r, c, patch_px));
        }
    }
    Ok(out)
}

/// Everything stage 1 needs about one (cloud, image, camera) example, with
/// masks already drawn.
#[derive(Clone, Debug, PartialEq)]
pub struct Stage1Example {
    /// The input cloud after resampling to the configured point count.
    pub cloud: PointCloud,
    pub patches: PatchSet,
    /// `T x (patch_px^2 * 3)` flattened image patches, row-major over the grid.
    pub image_patches: Vec<f64>,
    pub alignment: Vec<Option<usize>>,
    pub masks: MaskPair,
}

impl Stage1Example {
    pub fn new(cfg: &MaeConfig, pc: &PointCloud, img: &Image, cam: &CameraModel, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if img.width != cfg.image_width || img.height != cfg.image_height {
            return Err(Error::shape(
                "stage1_example",
                &[&img.shape(), &[cfg.image_height, cfg.image_width, 3]],
            ));
        }
        if cam.width != img.width || cam.height != img.height {
            return Err(Error::shape("stage1_example", &[&img.shape(), &[cam.height, cam.width, 3]]));
        }
        let pc = downsample(pc, cfg.num_points)?;
        let patches = fps_knn_patches(&pc, cfg.num_patches, cfg.patch_size)?;
        let (rows, cols) = cfg.grid();
        let alignment = align_patches(&patches, cam, cfg.patch_px, (rows, cols))?;
        let masks = complementary_masks(&alignment, patches.len(), rows * cols, cfg.mask_ratio, seed)?;
        let image_patches = patchify(img, cfg.patch_px)?;
        Ok(Self {
            cloud: pc,
            patches,
            image_patches,
            alignment,
            masks,
        })
    }

    /// Redraws both masks, keeping the patches and alignment.
    pub fn remask(&mut self, mask_ratio: f64, seed: u64) -> Result<()> {
        let t = self.masks.image_visible.len();
        self.masks = complementary_masks(&self.alignment, self.patches.len(), t, mask_ratio, seed)?;
        Ok(())
    }

    /// Masked point patches with a valid image alignment, paired with it.
    pub fn cross_pairs(&self) -> Vec<(usize, usize)> {
        self.masks
            .masked_points()
            .into_iter()
            .filter_map(|i| self.alignment[i].map(|j| (i, j)))
            .collect()
    }
}

/// Graph nodes produced by one stage-1 pass.
#[derive(Clone, Copy, Debug)]
pub struct Stage1Out {
    pub loss_point: Var,
    pub loss_image: Var,
    pub loss_cross: Var,
    pub loss: Var,
    /// `[masked, k, 3]` predicted local coordinates of masked point patches.
    pub recon_points: Option<Var>,
    /// `[masked, patch_px^2 * 3]` predicted masked image patches.
    pub recon_image: Option<Var>,
    pub pred_feats: Option<Var>,
    pub target_feats: Option<Var>,
}

/// Scalar losses of one pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Stage1Losses {
    pub point: f64,
    pub image: f64,
    pub cross: f64,
    pub total: f64,
}

impl Stage1Out {
    pub fn losses(&self, g: &Graph) -> Stage1Losses {
        Stage1Losses {
            point: g.item(self.loss_point),
            image: g.item(self.loss_image),
            cross: g.item(self.loss_cross),
            total: g.item(self.loss),
        }
    }
}

/// Which stage-1 terms enter the total.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossMask {
    pub point: bool,
    pub image: bool,
    pub cross: bool,
}

impl Default for LossMask {
    fn default() -> Self {
        Self {
            point: true,
            image: true,
            cross: true,
        }
    }
}

/// Dual-branch masked autoencoder with a shared fusion encoder-decoder and a
/// cross-modal prediction head.
#[derive(Clone, Debug)]
pub struct DualMae {
    pub cfg: MaeConfig,
    pub params: ParamStore,
    point_embed: Mlp,
    point_pos: Mlp,
    image_embed: Linear,
    image_pos: ParamId,
    mod_point: ParamId,
    mod_image: ParamId,
    mask_token: ParamId,
    point_encoder: Stack,
    image_encoder: Stack,
    shared_encoder: Stack,
    shared_decoder: Stack,
    point_decoder: Stack,
    image_decoder: Stack,
    point_head: Linear,
    image_head: Linear,
    cross_head: Mlp,
}

fn mse(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d = g.square(d);
    Ok(g.mean(d))
}

impl DualMae {
    pub fn new(cfg: MaeConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut params = ParamStore::new();
        let c = cfg.embed_dim;
        let (h, r) = (cfg.heads, cfg.mlp_ratio);
        let patch_dim = cfg.patch_px * cfg.patch_px * 3;
        let mut init = Init {
            store: &mut params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        let point_embed = Mlp::new(&mut init, "point_embed", [3, cfg.pointnet_hidden, c]);
        let point_pos = Mlp::new(&mut init, "point_pos", [3, c, c]);
        let image_embed = Linear::new(&mut init, "image_embed", patch_dim, c);
        let image_pos = init.normal("image_pos", &[cfg.image_tokens(), c], 0.02);
        let mod_point = init.normal("mod_point", &[1, c], 0.02);
        let mod_image = init.normal("mod_image", &[1, c], 0.02);
        let mask_token = init.normal("mask_token", &[1, c], 0.02);
        let point_encoder = Stack::new(&mut init, "point_encoder", cfg.branch_depth, c, h, r);
        let image_encoder = Stack::new(&mut init, "image_encoder", cfg.branch_depth, c, h, r);
        let shared_encoder = Stack::new(&mut init, "shared_encoder", cfg.shared_depth, c, h, r);
        let shared_decoder = Stack::new(&mut init, "shared_decoder", cfg.shared_decoder_depth, c, h, r);
        let point_decoder = Stack::new(&mut init, "point_decoder", cfg.decoder_depth, c, h, r);
        let image_decoder = Stack::new(&mut init, "image_decoder", cfg.decoder_depth, c, h, r);
        let point_head = Linear::new(&mut init, "point_head", c, cfg.patch_size * 3);
        let image_head = Linear::new(&mut init, "image_head", c, patch_dim);
        let cross_head = Mlp::new(&mut init, "cross_head", [c, c, c]);
        Ok(Self {
            cfg,
            params,
            point_embed,
            point_pos,
            image_embed,
            image_pos,
            mod_point,
            mod_image,
            mask_token,
            point_encoder,
            image_encoder,
            shared_encoder,
            shared_decoder,
            point_decoder,
            image_decoder,
            point_head,
            image_head,
            cross_head,
        })
    }

    /// Rebuilds the network for `cfg` and loads `params` by name.
    pub fn with_params(cfg: MaeConfig, params: &ParamStore) -> Result<Self> {
        let mut model = Self::new(cfg, 0)?;
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.name(id).to_string();
            let src = params
                .find(&name)
                .ok_or_else(|| Error::invalid(format!("checkpoint lacks parameter `{name}`")))?;
            let (src, dst) = (params.get(src), model.params.get_mut(id));
            if src.shape() != dst.shape() {
                return Err(Error::shape("load_parameter", &[src.shape(), dst.shape()]));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(model)
    }

    /// Token embedding of every point patch: per-point MLP, then max over
    /// the patch. Returns `[rows.len(), C]`.
    pub fn tokenize_points(&self, g: &mut Graph, p: &[Var], patches: &PatchSet, rows: &[usize]) -> Result<Var> {
        let k = patches.k;
        let mut local = Vec::with_capacity(rows.len() * k * 3);
        for &m in rows {
            local.extend_from_slice(patches.patch_local(m));
        }
        let x = g.constant(&[rows.len() * k, 3], local)?;
        let f = self.point_embed.forward(g, p, x)?;
        let f = g.reshape(f, &[rows.len(), k, self.cfg.embed_dim])?;
        g.max_axis(f, 1)
    }

    /// Positional embedding of every patch center, `[M, C]`.
    pub fn point_positions(&self, g: &mut Graph, p: &[Var], patches: &PatchSet) -> Result<Var> {
        let centers = g.constant(&[patches.len(), 3], patches.centers_flat())?;
        self.point_pos.forward(g, p, centers)
    }

    /// Linear embedding of the selected image patches, `[rows.len(), C]`.
    pub fn embed_image_patches(&self, g: &mut Graph, p: &[Var], image_patches: &[f64], rows: &[usize]) -> Result<Var> {
        let d = self.cfg.patch_px * self.cfg.patch_px * 3;
        let t = self.cfg.image_tokens();
        if image_patches.len() != t * d {
            return Err(Error::shape("tokenize_image", &[&[t, d], &[image_patches.len()]]));
        }
        let mut sel = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            sel.extend_from_slice(&image_patches[r * d..(r + 1) * d]);
        }
        let x = g.constant(&[rows.len(), d], sel)?;
        self.image_embed.forward(g, p, x)
    }

    /// Patch embedding plus the learned per-index positional embedding.
    pub fn tokenize_image(&self, g: &mut Graph, p: &[Var], image_patches: &[f64], rows: &[usize]) -> Result<Var> {
        let tok = self.embed_image_patches(g, p, image_patches, rows)?;
        let pos = g.gather_rows(p[self.image_pos.0], rows)?;
        g.add(tok, pos)
    }

    /// Expands `visible` rows to a full `[n, C]` token set with the mask
    /// token elsewhere, then adds positional embeddings.
    fn fill_masked(&self, g: &mut Graph, p: &[Var], visible: Var, idx: &[usize], pos: Var, n: usize) -> Result<Var> {
        let zeros = g.constant(&[n, self.cfg.embed_dim], vec![0.0; n * self.cfg.embed_dim])?;
        let base = g.add(zeros, p[self.mask_token.0])?;
        let full = g.scatter_rows(base, idx, visible)?;
        g.add(full, pos)
    }

    /// Full stage-1 pass on graph `g` with parameters bound as `p`.
    pub fn forward(&self, g: &mut Graph, p: &[Var], ex: &Stage1Example) -> Result<Stage1Out> {
        self.forward_with(g, p, ex, LossMask::default())
    }

    pub fn forward_with(&self, g: &mut Graph, p: &[Var], ex: &Stage1Example, use_loss: LossMask) -> Result<Stage1Out> {
        let cfg = &self.cfg;
        let m = ex.patches.len();
        let t = cfg.image_tokens();
        let (vis_p, masked_p) = (ex.masks.visible_points(), ex.masks.masked_points());
        let (vis_i, masked_i) = (ex.masks.visible_image(), ex.masks.masked_image());
        if m != cfg.num_patches || ex.masks.image_visible.len() != t {
            return Err(Error::shape("stage1_forward", &[&[m, t], &[cfg.num_patches, cfg.image_tokens()]]));
        }

        // Branch encoders on visible tokens.
        let pos_p = self.point_positions(g, p, &ex.patches)?;
        let tok_p = self.tokenize_points(g, p, &ex.patches, &vis_p)?;
        let vis_pos = g.gather_rows(pos_p, &vis_p)?;
        let x_p = g.add(tok_p, vis_pos)?;
        let enc_p = self.point_encoder.forward(g, p, x_p)?;
        let x_i = self.tokenize_image(g, p, &ex.image_patches, &vis_i)?;
        let enc_i = self.image_encoder.forward(g, p, x_i)?;

        // Shared fusion.
        let a = g.add(enc_p, p[self.mod_point.0])?;
        let b = g.add(enc_i, p[self.mod_image.0])?;
        let joint = g.concat(&[a, b], 0)?;
        let joint = self.shared_encoder.forward(g, p, joint)?;
        let joint = self.shared_decoder.forward(g, p, joint)?;
        let dec_p = g.slice(joint, 0, 0, vis_p.len())?;
        let dec_i = g.slice(joint, 0, vis_p.len(), vis_i.len())?;

        // Branch decoders over the full token sets.
        let full_p = self.fill_masked(g, p, dec_p, &vis_p, pos_p, m)?;
        let dp = self.point_decoder.forward(g, p, full_p)?;
        let pos_i = p[self.image_pos.0];
        let full_i = self.fill_masked(g, p, dec_i, &vis_i, pos_i, t)?;
        let di = self.image_decoder.forward(g, p, full_i)?;

        let k = cfg.patch_size;
        let (loss_point, recon_points) = if masked_p.is_empty() {
            (g.scalar(0.0), None)
        } else {
            let rows = g.gather_rows(dp, &masked_p)?;
            let pred = self.point_head.forward(g, p, rows)?;
            let pred = g.reshape(pred, &[masked_p.len(), k, 3])?;
            let mut gt = Vec::with_capacity(masked_p.len() * k * 3);
            for &i in &masked_p {
                gt.extend_from_slice(ex.patches.patch_local(i));
            }
            let gt = g.constant(&[masked_p.len(), k, 3], gt)?;
            let per_patch = chamfer_var(g, pred, gt)?;
            (g.mean(per_patch), Some(pred))
        };

        let d = cfg.patch_px * cfg.patch_px * 3;
        let (loss_image, recon_image) = if masked_i.is_empty() {
            (g.scalar(0.0), None)
        } else {
            let rows = g.gather_rows(di, &masked_i)?;
            let pred = self.image_head.forward(g, p, rows)?;
            let mut gt = Vec::with_capacity(masked_i.len() * d);
            for &j in &masked_i {
                gt.extend_from_slice(&ex.image_patches[j * d..(j + 1) * d]);
            }
            let gt = g.constant(&[masked_i.len(), d], gt)?;
            (mse(g, pred, gt)?, Some(pred))
        };

        let pairs = ex.cross_pairs();
        let (loss_cross, pred_feats, target_feats) = if pairs.is_empty() {
            (g.scalar(0.0), None, None)
        } else {
            let src: Vec<usize> = pairs.iter().map(|&(i, _)| i).collect();
            // Aligned image patches are forced visible, so each has an
            // encoder output.
            let dst: Vec<usize> = pairs
                .iter()
                .map(|&(_, j)| vis_i.binary_search(&j).map_err(|_| Error::invalid("aligned image patch is masked")))
                .collect::<Result<_>>()?;
            let rows = g.gather_rows(dp, &src)?;
            let pred = self.cross_head.forward(g, p, rows)?;
            let target = g.gather_rows(enc_i, &dst)?;
            let target = g.detach(target);
            (mse(g, pred, target)?, Some(pred), Some(target))
        };

        let zero = g.scalar(0.0);
        let pick = |on: bool, v: Var| if on { v } else { zero };
        let total = g.add(pick(use_loss.point, loss_point), pick(use_loss.image, loss_image))?;
        let loss = g.add(total, pick(use_loss.cross, loss_cross))?;
        Ok(Stage1Out {
            loss_point,
            loss_image,
            loss_cross,
            loss,
            recon_points,
            recon_image,
            pred_feats,
            target_feats,
        })
    }

    /// Forward pass without gradients.
    pub fn evaluate(&self, ex: &Stage1Example) -> Result<(Stage1Losses, Graph, Stage1Out)> {
        let mut g = Graph::new();
        let p = g.bind(&self.params);
        let out = self.forward(&mut g, &p, ex)?;
        Ok((out.losses(&g), g, out))
    }
}

/// Patched cloud with masked patches replaced by their predictions, as a
/// differentiable `[M * k, 3]` node.
pub fn reconstruct_full_cloud_var(g: &mut Graph, ex: &Stage1Example, recon_points: Option<Var>) -> Result<Var> {
    let patches = &ex.patches;
    let (m, k) = (patches.len(), patches.k);
    let mut base = Vec::with_capacity(m * k * 3);
    for &j in &patches.members {
        base.extend(ex.cloud.points()[j]);
    }
    let base = g.constant(&[m, k * 3], base)?;
    let masked = ex.masks.masked_points();
    let full = match recon_points {
        Some(pred) if !masked.is_empty() => {
            let pred = g.reshape(pred, &[masked.len(), k * 3])?;
            let offs: Vec<f64> = masked
                .iter()
                .flat_map(|&i| (0..k).flat_map(move |_| patches.centers[i]))
                .collect();
            let offs = g.constant(&[masked.len(), k * 3], offs)?;
            let abs = g.add(pred, offs)?;
            g.scatter_rows(base, &masked, abs)?
        }
        _ => base,
    };
    g.reshape(full, &[m * k, 3])
}

/// Value-only version of [`reconstruct_full_cloud_var`].
pub fn reconstruct_full_cloud(ex: &Stage1Example, recon_points: Option<&[f64]>) -> Result<PointCloud> {
    let mut g = Graph::new();
    let pred = match recon_points {
        Some(v) => Some(g.constant(&[ex.masks.masked_points().len(), ex.patches.k, 3], v.to_vec())?),
        None => None,
    };
    let full = reconstruct_full_cloud_var(&mut g, ex, pred)?;
    PointCloud::from_flat(g.value(full))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, render_ground_truth, sample_point_cloud, SceneSpec};

    fn example(cfg: &MaeConfig, seed: u64) -> Stage1Example {
        let scene = generate_scene(&SceneSpec {
            seed: 4,
            ..Default::default()
        })
        .unwrap();
        let cam = scene.ring_cameras(1, cfg.image_width, cfg.image_height, 30.0).unwrap().remove(0);
        let frame = render_ground_truth(&scene, &cam).unwrap();
        let pc = sample_point_cloud(&scene, 3000, 1).unwrap();
        Stage1Example::new(cfg, &pc, &frame.image, &cam, seed).unwrap()
    }

    #[test]
    fn patchify_counts() {
        let img = Image::filled(352, 256, [0.1; 3]);
        assert_eq!(patchify(&img, 16).unwrap().len(), 352 * 16 * 16 * 3);
        assert!(patchify(&Image::filled(30, 32, [0.0; 3]), 16).is_err());
        assert_eq!(patchify(&Image::filled(32, 32, [0.0; 3]), 16).unwrap().len(), 4 * 768);
    }

    #[test]
    fn point_tokens_ignore_member_order() {
        let cfg = MaeConfig::tiny();
        let model = DualMae::new(cfg.clone(), 1).unwrap();
        let ex = example(&cfg, 0);
        let mut shuffled = ex.patches.clone();
        let k = shuffled.k;
        let local = shuffled.local_coords[..k * 3].to_vec();
        for i in 0..k {
            let j = k - 1 - i;
            shuffled.local_coords[i * 3..i * 3 + 3].copy_from_slice(&local[j * 3..j * 3 + 3]);
        }
        let mut g = Graph::new();
        let p = g.bind(&model.params);
        let a = model.tokenize_points(&mut g, &p, &ex.patches, &[0]).unwrap();
        let b = model.tokenize_points(&mut g, &p, &shuffled, &[0]).unwrap();
        assert_eq!(g.value(a), g.value(b));
        let all: Vec<usize> = (0..cfg.num_patches).collect();
        let t = model.tokenize_points(&mut g, &p, &ex.patches, &all).unwrap();
        assert_eq!(g.shape(t), &[cfg.num_patches, cfg.embed_dim]);
    }

    #[test]
    fn black_image_tokens_equal_bias() {
        let cfg = MaeConfig::tiny();
        let model = DualMae::new(cfg.clone(), 1).unwrap();
        let patches = patchify(&Image::filled(32, 32, [0.0; 3]), 8).unwrap();
        let mut g = Graph::new();
        let p = g.bind(&model.params);
        let rows: Vec<usize> = (0..16).collect();
        let t = model.embed_image_patches(&mut g, &p, &patches, &rows).unwrap();
        let v = g.value(t);
        let c = cfg.embed_dim;
        for r in 1..16 {
            assert_eq!(&v[r * c..(r + 1) * c], &v[..c]);
        }
    }

    #[test]
    fn untrained_losses_positive_and_additive() {
        let cfg = MaeConfig::tiny();
        let model = DualMae::new(cfg.clone(), 2).unwrap();
        let (l, _, _) = model.evaluate(&example(&cfg, 5)).unwrap();
        assert!(l.point > 0.0 && l.image > 0.0 && l.cross > 0.0);
        assert!(l.total.is_finite());
        assert_eq!(l.total, l.point + l.image + l.cross);
    }

    #[test]
    fn empty_mask_gives_zero_losses() {
        let cfg = MaeConfig {
            mask_ratio: 0.01,
            ..MaeConfig::tiny()
        };
        let model = DualMae::new(cfg.clone(), 2).unwrap();
        let ex = example(&cfg, 5);
        assert!(ex.masks.masked_points().is_empty() && ex.masks.masked_image().is_empty());
        let (l, _, out) = model.evaluate(&ex).unwrap();
        assert_eq!((l.point, l.image, l.cross, l.total), (0.0, 0.0, 0.0, 0.0));
        assert!(out.recon_points.is_none());
        let full = reconstruct_full_cloud(&ex, None).unwrap();
        let expect: Vec<[f64; 3]> = ex.patches.members.iter().map(|&j| ex.cloud.points()[j]).collect();
        assert_eq!(full.points(), expect.as_slice());
    }

    #[test]
    fn perfect_prediction_restores_patched_cloud() {
        let cfg = MaeConfig::tiny();
        let ex = example(&cfg, 9);
        let gt: Vec<f64> = ex
            .masks
            .masked_points()
            .iter()
            .flat_map(|&i| ex.patches.patch_local(i).to_vec())
            .collect();
        let full = reconstruct_full_cloud(&ex, Some(&gt)).unwrap();
        assert_eq!(full.len(), cfg.num_patches * cfg.patch_size);
        for (q, &j) in full.points().iter().zip(&ex.patches.members) {
            let p = ex.cloud.points()[j];
            for c in 0..3 {
                assert!((q[c] - p[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn default_config_reconstructs_2048_points() {
        let cfg = MaeConfig::default();
        let ex = example(&cfg, 1);
        assert_eq!(reconstruct_full_cloud(&ex, None).unwrap().len(), 2048);
        assert_eq!(ex.masks.masked_points().len(), 38);
    }

    #[test]
    fn both_tokenizers_receive_gradient() {
        let cfg = MaeConfig::tiny();
        let mut model = DualMae::new(cfg.clone(), 3).unwrap();
        let ex = example(&cfg, 2);
        let mut g = Graph::new();
        let p = g.bind(&model.params);
        let out = model.forward(&mut g, &p, &ex).unwrap();
        g.backward(out.loss).unwrap();
        g.accumulate_grads(&mut model.params, &p).unwrap();
        for (name, t) in model.params.iter() {
            if name.starts_with("point_embed") || name.starts_with("image_embed") {
                let grad = t.grad().unwrap();
                assert!(grad.iter().any(|&v| v != 0.0), "{name} has zero gradient");
            }
        }
    }

    #[test]
    fn cross_target_is_detached() {
        let cfg = MaeConfig::tiny();
        let model = DualMae::new(cfg.clone(), 3).unwrap();
        let ex = example(&cfg, 2);
        let mut g = Graph::new();
        let p = g.bind(&model.params);
        let only_cross = LossMask {
            point: false,
            image: false,
            cross: true,
        };
        let out = model.forward_with(&mut g, &p, &ex, only_cross).unwrap();
        let target = out.target_feats.unwrap();
        assert!(!g.requires_grad(target));
        assert!(g.requires_grad(out.pred_feats.unwrap()));
        g.backward(out.loss).unwrap();
        assert!(g.grad(target).is_none());
    }
}
