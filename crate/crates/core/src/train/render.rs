use super::derive_seed;
use super::stage2::reconstruct_gaussians;
use crate::error::{Error, Result};
use crate::gsplat::{psnr, rasterize, GaussianSet, GsHyper, RenderSettings};
use crate::image::Image;
use crate::mae::{reconstruct_full_cloud, Checkpoint, Stage1Example};
use crate::scene::{generate_scene, render_ground_truth, sample_point_cloud, SceneSpec};

#[derive(Clone, Debug, PartialEq)]
pub struct RenderOptions {
    pub views: usize,
    pub focal: f64,
    /// Image size when the checkpoint has no network to dictate one.
    pub width: usize,
    pub height: usize,
    /// Stored Gaussian set to render; `None` rebuilds Gaussians with the
    /// network.
    pub gaussians: Option<usize>,
    pub gs_iters: usize,
    pub points: usize,
    pub seed: u64,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            views: 3,
            focal: 90.0,
            width: 128,
            height: 96,
            gaussians: None,
            gs_iters: 200,
            points: 8192,
            seed: 0,
        }
    }
}

/// One camera's splatted render next to the analytic ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedView {
    pub render: Image,
    pub ground_truth: Image,
    pub psnr: f64,
}

/// Renders a checkpoint from ring cameras around the scene described by
/// `spec`.
///
/// Uses the stored Gaussian set selected in `opts`, or otherwise fits
/// Gaussians seeded at the network's reconstruction of the scene.
pub fn render_checkpoint(ck: &Checkpoint, spec: &SceneSpec, opts: &RenderOptions) -> Result<Vec<RenderedView>> {
    let scene = generate_scene(spec)?;
    let model = if ck.has_network() { Some(ck.model()?) } else { None };
    let (w, h) = match &model {
        Some(m) => (m.cfg.image_width, m.cfg.image_height),
        None => (opts.width, opts.height),
    };
    let cams = scene.ring_cameras(opts.views.max(1), w, h, opts.focal)?;
    let truth = cams
        .iter()
        .map(|c| render_ground_truth(&scene, c))
        .collect::<Result<Vec<_>>>()?;
    let stored = ck.gaussians()?;
    let gs: GaussianSet = match (opts.gaussians, &model) {
        (Some(i), _) => stored
            .into_iter()
            .find(|(s, _)| *s == i)
            .map(|(_, gs)| gs)
            .ok_or_else(|| Error::invalid(format!("checkpoint has no Gaussians for scene {i}")))?,
        (None, Some(m)) => {
            let cloud = sample_point_cloud(&scene, opts.points, derive_seed(opts.seed, "cloud", 0))?;
            let f = &truth[0];
            let ex = Stage1Example::new(&m.cfg, &cloud, &f.image, &f.camera, derive_seed(opts.seed, "eval", 0))?;
            let (_, g, out) = m.evaluate(&ex)?;
            let recon = out.recon_points.map(|v| g.value(v).to_vec());
            let p_rec = reconstruct_full_cloud(&ex, recon.as_deref())?;
            let views: Vec<_> = truth.iter().map(|f| (f.camera.clone(), f.image.clone())).collect();
            reconstruct_gaussians(&p_rec, &views, opts.gs_iters, &GsHyper::default())?
        }
        (None, None) => match stored.into_iter().next() {
            Some((_, gs)) => gs,
            None => return Err(Error::invalid("checkpoint holds neither a network nor Gaussians")),
        },
    };
    truth
        .into_iter()
        .map(|f| {
            let render = rasterize(&gs, &f.camera, &RenderSettings::default())?.image;
            let db = psnr(&render, &f.image)?;
            Ok(RenderedView {
                render,
                ground_truth: f.image,
                psnr: db,
            })
        })
        .collect()
}
