//! Explicit 3D Gaussian scene representation, differentiable splatting,
//! image metrics and the splatting-side losses.

mod covariance;
mod loss;
mod optimize;
mod project;
mod raster;
mod render_op;
mod ssim;

use std::path::Path;

pub use covariance::{build_covariance, covariance_vjp, quat_to_rotation};
pub use loss::{
    gs_image_loss, gs_image_loss_var, gs_photometric_loss, gs_photometric_loss_var, gs_point_loss, l1, l1_var,
    mean_volume, volume_var,
};
pub use optimize::{optimize_gaussians, GsHyper, GsOptimizeReport};
pub use project::{project_gaussian, project_vjp, GaussianGrad, GaussianView, Splat2D, SplatGrad, DILATION};
pub use raster::{rasterize, GaussianSetGrad, RenderSettings, Rendered};
pub use render_op::{render_var, GaussianVars};
pub use ssim::{blur_kernel, psnr, ssim, ssim_var, SSIM_C1, SSIM_C2};

use crate::autodiff::{sigmoid, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::pointcloud::ply::{write_vertices, PlyFormat};
use crate::pointcloud::{knn, PointCloud};

/// Initial opacity of Gaussians seeded from a point cloud.
pub const INIT_OPACITY: f64 = 0.1;

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Learnable Gaussian primitives, stored as raw (pre-activation) parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSet {
    /// `N x 3` centers.
    pub mu: Vec<f64>,
    /// `N x 4` quaternions `(w, x, y, z)`, normalized before use.
    pub quat: Vec<f64>,
    /// `N x 3` log-scales.
    pub log_scale: Vec<f64>,
    /// `N x 3` color logits; colors are their sigmoid.
    pub color_logit: Vec<f64>,
    /// `N` opacity logits.
    pub opacity_logit: Vec<f64>,
}

pub const PARAM_NAMES: [&str; 5] = ["mu", "quat", "log_scale", "color_logit", "opacity_logit"];

impl GaussianSet {
    pub fn new(
        mu: Vec<f64>,
        quat: Vec<f64>,
        log_scale: Vec<f64>,
        color_logit: Vec<f64>,
        opacity_logit: Vec<f64>,
    ) -> Result<Self> {
        let gs = Self {
            mu,
            quat,
            log_scale,
            color_logit,
            opacity_logit,
        };
        gs.validate()?;
        Ok(gs)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.opacity_logit.len();
        let lens = [self.mu.len(), self.quat.len(), self.log_scale.len(), self.color_logit.len()];
        if lens != [n * 3, n * 4, n * 3, n * 3] {
            return Err(Error::shape(
                "gaussian_set",
                &[&[self.mu.len()], &[self.quat.len()], &[self.log_scale.len()], &[self.color_logit.len()], &[n]],
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.opacity_logit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.opacity_logit.is_empty()
    }

    /// Activated parameters of Gaussian `i`.
    pub fn view(&self, i: usize) -> GaussianView {
        let t3 = |v: &[f64]| [v[i * 3], v[i * 3 + 1], v[i * 3 + 2]];
        GaussianView {
            mu: t3(&self.mu),
            quat: [self.quat[i * 4], self.quat[i * 4 + 1], self.quat[i * 4 + 2], self.quat[i * 4 + 3]],
            log_scale: t3(&self.log_scale),
            color: t3(&self.color_logit).map(sigmoid),
            opacity: sigmoid(self.opacity_logit[i]),
        }
    }

    /// Seeds one Gaussian per point: isotropic scale equal to the mean
    /// distance to the three nearest neighbors, identity rotation, opacity
    /// 0.1 and mid-gray color.
    pub fn from_points(pc: &PointCloud) -> Result<Self> {
        let pts = pc.points();
        let n = pts.len();
        let k = (n - 1).min(3);
        let mut log_scale = Vec::with_capacity(n * 3);
        let neighbors = knn(pts, pts, k + 1);
        for (i, nb) in neighbors.iter().enumerate() {
            let dists: Vec<f64> = nb
                .iter()
                .filter(|&&j| j != i)
                .take(k)
                .map(|&j| crate::pointcloud::dist2(&pts[i], &pts[j]).sqrt())
                .collect();
            let mean = if dists.is_empty() { 0.01 } else { dists.iter().sum::<f64>() / dists.len() as f64 };
            let ls = mean.max(1e-7).ln();
            log_scale.extend([ls; 3]);
        }
        Self::new(
            pc.flat(),
            (0..n).flat_map(|_| [1.0, 0.0, 0.0, 0.0]).collect(),
            log_scale,
            vec![0.0; n * 3],
            vec![logit(INIT_OPACITY); n],
        )
    }

    /// Gaussian centers as a point cloud.
    pub fn centers(&self) -> Result<PointCloud> {
        PointCloud::from_flat(&self.mu)
    }

    /// Parameter store holding the five groups, each with its own learning
    /// rate multiplier.
    pub fn to_params(&self, lr_scales: [f64; 5]) -> ParamStore {
        let n = self.len();
        let mut store = ParamStore::new();
        let groups = [
            (&self.mu, vec![n, 3]),
            (&self.quat, vec![n, 4]),
            (&self.log_scale, vec![n, 3]),
            (&self.color_logit, vec![n, 3]),
            (&self.opacity_logit, vec![n]),
        ];
        for ((name, (data, shape)), s) in PARAM_NAMES.iter().zip(groups).zip(lr_scales) {
            let t = Tensor::new(&shape, data.clone()).expect("consistent shapes").with_grad();
            store.add_scaled(*name, t, s);
        }
        store
    }

    /// Inverse of [`GaussianSet::to_params`].
    pub fn from_params(store: &ParamStore) -> Result<Self> {
        let get = |name: &str| -> Result<Vec<f64>> {
            let id = store
                .find(name)
                .ok_or_else(|| Error::invalid(format!("missing Gaussian parameter `{name}`")))?;
            Ok(store.get(id).data().to_vec())
        };
        Self::new(get("mu")?, get("quat")?, get("log_scale")?, get("color_logit")?, get("opacity_logit")?)
    }

    /// Writes a vertex PLY with centers, log-scales, rotations, opacity
    /// logits and activated colors.
    pub fn write_ply(&self, path: impl AsRef<Path>, format: PlyFormat) -> Result<()> {
        let names = [
            "x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "opacity", "red",
            "green", "blue",
        ];
        let mut values = Vec::with_capacity(self.len() * names.len());
        for i in 0..self.len() {
            values.extend_from_slice(&self.mu[i * 3..i * 3 + 3]);
            values.extend_from_slice(&self.log_scale[i * 3..i * 3 + 3]);
            values.extend_from_slice(&self.quat[i * 4..i * 4 + 4]);
            values.push(self.opacity_logit[i]);
            values.extend(self.color_logit[i * 3..i * 3 + 3].iter().map(|&c| sigmoid(c)));
        }
        write_vertices(path, &names, &values, format)
    }
}
