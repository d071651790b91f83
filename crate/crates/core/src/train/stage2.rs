use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::data::{select_fraction, Dataset};
use super::report::{LossReport, MetricsSink};
use super::stage1::{diverged, Trainer};
use super::{derive_seed, epoch_index};
use crate::autodiff::Graph;
use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::gsplat::{
    gs_image_loss, optimize_gaussians, psnr, rasterize, GaussianSet, GsHyper, RenderSettings,
};
use crate::image::Image;
use crate::mae::{reconstruct_full_cloud, reconstruct_full_cloud_var, Stage1Example};
use crate::pointcloud::{chamfer, chamfer_var, PointCloud};

/// Seeds Gaussians at the distinct points of `p_rec` and fits them to
/// `views`.
pub fn reconstruct_gaussians(
    p_rec: &PointCloud,
    views: &[(CameraModel, Image)],
    iters: usize,
    hyper: &GsHyper,
) -> Result<GaussianSet> {
    let mut pts = p_rec.points().to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    pts.dedup();
    let init = GaussianSet::from_points(&PointCloud::new(pts)?)?;
    Ok(optimize_gaussians(&init, views, iters, hyper, &RenderSettings::default())?.0)
}

/// Mean image loss and mean PSNR of `gs` over `views`.
pub(crate) fn render_scores(gs: &GaussianSet, views: &[(CameraModel, Image)], lambda: f64) -> Result<(f64, f64)> {
    let (mut loss, mut db) = (0.0, 0.0);
    for (cam, target) in views {
        let img = rasterize(gs, cam, &RenderSettings::default())?.image;
        loss += gs_image_loss(&img, target, lambda)?;
        db += psnr(&img, target)?;
    }
    let n = views.len() as f64;
    Ok((loss / n, db / n))
}

/// Geometric agreement between splatting and the network, per trained
/// scene.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Stage2Summary {
    pub scenes: Vec<usize>,
    /// `chamfer(P_GS, P_rec)` as logged, before each scene's network update.
    pub chamfer_before: Vec<f64>,
    /// The same quantity recomputed with the final network against the same
    /// `P_GS` and masks.
    pub chamfer_after: Vec<f64>,
    pub skipped: Vec<usize>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

impl Stage2Summary {
    pub fn mean_before(&self) -> f64 {
        mean(&self.chamfer_before)
    }

    pub fn mean_after(&self) -> f64 {
        mean(&self.chamfer_after)
    }
}

pub struct Stage2Run {
    pub trainer: Trainer,
    pub reports: Vec<LossReport>,
    /// Optimized Gaussians of each trained scene, from its last visit.
    pub gaussians: Vec<(usize, GaussianSet)>,
    pub summary: Stage2Summary,
    pub checkpoint: Option<PathBuf>,
}

fn scene_views(data: &Dataset, s: usize) -> Vec<(CameraModel, Image)> {
    data.scenes[s].frames.iter().map(|f| (f.camera.clone(), f.image.clone())).collect()
}

/// Joint training, continuing `trainer` (typically resumed from a stage-1
/// checkpoint with its optimizer state). Per scene, the network
/// reconstructs `P_rec`, Gaussians seeded there are fitted to the scene's
/// views, and the network takes one step on the stage-1 loss plus the weighted splatting losses. The fitted
/// Gaussians are constants for the network; only `chamfer(P_GS, P_rec)`
/// carries gradient back.
///
/// Scenes whose splatting fit diverges are logged and skipped.
pub fn train_stage2(data: &Dataset, cfg: &TrainConfig, mut trainer: Trainer, out: Option<&Path>) -> Result<Stage2Run> {
    cfg.validate()?;
    if trainer.model.cfg != cfg.mae {
        return Err(Error::Config("network in checkpoint differs from the [mae] config".into()));
    }
    data.check_image_size(cfg.mae.image_width, cfg.mae.image_height)?;
    let selected = select_fraction(data.scenes.len(), cfg.fraction, cfg.seed)?;
    trainer.opt.lr = cfg.lr;
    trainer.opt.weight_decay = cfg.weight_decay;
    let mut sink = match out {
        Some(dir) => MetricsSink::create(&dir.join("metrics_stage2.jsonl"))?,
        None => MetricsSink::discard(),
    };
    let mut reports = Vec::new();
    let mut last: BTreeMap<usize, (Stage1Example, GaussianSet, f64)> = BTreeMap::new();
    let mut skipped = Vec::new();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut order = selected.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "order2", epoch as u64)));
        for s in order {
            let scene = &data.scenes[s];
            let frame = &scene.frames[epoch % scene.frames.len()];
            let seed = derive_seed(cfg.seed, "mask2", epoch_index(epoch, s));
            let ex = Stage1Example::new(&cfg.mae, &scene.cloud, &frame.image, &frame.camera, seed)?;

            let mut g = Graph::new();
            let p = g.bind(&trainer.model.params);
            let out1 = trainer.model.forward(&mut g, &p, &ex)?;
            let l1 = out1.losses(&g);
            let p_rec_var = reconstruct_full_cloud_var(&mut g, &ex, out1.recon_points)?;
            let p_rec = PointCloud::from_flat(g.value(p_rec_var))?;
            let views = scene_views(data, s);
            let gs = match reconstruct_gaussians(&p_rec, &views, cfg.gs_iters, &cfg.gs) {
                Ok(gs) => gs,
                Err(Error::Divergence { iteration }) => {
                    let mut r = LossReport::stage1(step, epoch, l1.point, l1.image, l1.cross);
                    r.stage = 2;
                    r.scene = Some(s);
                    r.note = Some(format!("splatting diverged at iteration {iteration}; scene skipped"));
                    sink.write(&r)?;
                    reports.push(r);
                    skipped.push(s);
                    step += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let (gs_image, db) = render_scores(&gs, &views, cfg.lambda)?;
            let p_gs = g.constant(&[gs.len(), 3], gs.mu.clone())?;
            let cd = chamfer_var(&mut g, p_gs, p_rec_var)?;
            let gs_point = g.item(cd);
            let weighted = g.scale(cd, cfg.beta);
            let branch = g.add_scalar(weighted, cfg.alpha * gs_image);
            let total = g.add(out1.loss, branch)?;

            let mut r = LossReport::stage1(step, epoch, l1.point, l1.image, l1.cross)
                .with_branch(cfg.alpha, cfg.beta, gs_image, gs_point);
            r.scene = Some(s);
            r.psnr = Some(db);
            if !g.item(total).is_finite() {
                return Err(diverged(&trainer, out, step));
            }
            g.backward(total)?;
            trainer.apply(&[(g, p)])?;
            sink.write(&r)?;
            reports.push(r);
            last.insert(s, (ex, gs, gs_point));
            step += 1;
        }
    }

    let mut summary = Stage2Summary {
        skipped,
        ..Default::default()
    };
    for (&s, (ex, gs, before)) in &last {
        let (_, g, o) = trainer.model.evaluate(ex)?;
        let recon = o.recon_points.map(|v| g.value(v).to_vec());
        let p_rec = reconstruct_full_cloud(ex, recon.as_deref())?;
        summary.scenes.push(s);
        summary.chamfer_before.push(*before);
        summary.chamfer_after.push(chamfer(&gs.centers()?, &p_rec)?);
    }
    let gaussians: Vec<(usize, GaussianSet)> = last.into_iter().map(|(s, (_, gs, _))| (s, gs)).collect();
    let checkpoint = match out {
        Some(dir) => {
            let mut ck = trainer.checkpoint();
            for (s, gs) in &gaussians {
                ck.add_gaussians(*s, gs);
            }
            let path = dir.join("stage2.ckpt");
            ck.write(&path)?;
            Some(path)
        }
        None => None,
    };
    Ok(Stage2Run {
        trainer,
        reports,
        gaussians,
        summary,
        checkpoint,
    })
}
