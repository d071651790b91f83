use serde::{Deserialize, Serialize};

use super::loss::gs_photometric_loss_var;
use super::raster::RenderSettings;
use super::render_op::{render_var, GaussianVars};
use super::GaussianSet;
use crate::autodiff::{AdamW, Graph, ParamStore};
use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::image::Image;

/// Per-group learning rates and photometric loss weights.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GsHyper {
    pub lr_mu: f64,
    pub lr_quat: f64,
    pub lr_scale: f64,
    pub lr_color: f64,
    pub lr_opacity: f64,
    pub lambda_ssim: f64,
    pub gamma: f64,
}

impl Default for GsHyper {
    fn default() -> Self {
        Self {
            lr_mu: 2e-3,
            lr_quat: 1e-2,
            lr_scale: 1e-2,
            lr_color: 5e-2,
            lr_opacity: 5e-2,
            lambda_ssim: 0.2,
            gamma: 0.01,
        }
    }
}

impl GsHyper {
    fn lrs(&self) -> [f64; 5] {
        [self.lr_mu, self.lr_quat, self.lr_scale, self.lr_color, self.lr_opacity]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GsOptimizeReport {
    /// Photometric loss summed over views, evaluated before each update.
    pub losses: Vec<f64>,
    /// Loss of the returned set.
    pub final_loss: f64,
}

fn view_loss(
    store: &ParamStore,
    views: &[(CameraModel, Image)],
    hyper: &GsHyper,
    settings: &RenderSettings,
    with_grad: bool,
) -> Result<(f64, Graph, Vec<crate::autodiff::Var>)> {
    let mut g = Graph::new();
    let vars = g.bind(store);
    let gv = GaussianVars::from_slice(&vars);
    let mut total = None;
    for (cam, target) in views {
        let r = render_var(&mut g, &gv, cam, settings)?;
        let t = g.constant(&target.shape(), target.data.clone())?;
        let l = gs_photometric_loss_var(&mut g, r, t, gv.log_scale, hyper.lambda_ssim, hyper.gamma)?;
        total = Some(match total {
            None => l,
            Some(acc) => g.add(acc, l)?,
        });
    }
    let total = total.ok_or_else(|| Error::invalid("optimize_gaussians: no views"))?;
    let value = g.item(total);
    if with_grad && value.is_finite() {
        g.backward(total)?;
    }
    Ok((value, g, vars))
}

/// Minimizes the photometric loss summed over `views` with Adam (one
/// learning rate per parameter group).
pub fn optimize_gaussians(
    gs: &GaussianSet,
    views: &[(CameraModel, Image)],
    iters: usize,
    hyper: &GsHyper,
    settings: &RenderSettings,
) -> Result<(GaussianSet, GsOptimizeReport)> {
    if views.is_empty() {
        return Err(Error::invalid("optimize_gaussians: no views"));
    }
    for (cam, img) in views {
        if img.shape() != [cam.height, cam.width, 3] {
            return Err(Error::shape("optimize_gaussians", &[&img.shape(), &[cam.height, cam.width, 3]]));
        }
    }
    let mut store = gs.to_params(hyper.lrs());
    let mut opt = AdamW::new(1.0, 0.0);
    let mut report = GsOptimizeReport::default();
    for it in 0..iters {
        let (loss, g, vars) = view_loss(&store, views, hyper, settings, true)?;
        if !loss.is_finite() {
            return Err(Error::Divergence { iteration: it });
        }
        report.losses.push(loss);
        g.accumulate_grads(&mut store, &vars)?;
        opt.step(&mut store, true)?;
    }
    let out = GaussianSet::from_params(&store)?;
    let (final_loss, _, _) = view_loss(&store, views, hyper, settings, false)?;
    if !final_loss.is_finite() {
        return Err(Error::Divergence { iteration: iters });
    }
    report.final_loss = final_loss;
    Ok((out, report))
}
