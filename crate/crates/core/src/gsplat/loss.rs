//! Photometric, image-fidelity and geometric losses of the splatting branch.

use super::ssim::ssim_var;
use super::GaussianSet;
use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::pointcloud::{chamfer, PointCloud};

/// Mean absolute difference.
pub fn l1_var(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    if g.shape(a) != g.shape(b) {
        let (sa, sb) = (g.shape(a).to_vec(), g.shape(b).to_vec());
        return Err(Error::shape("l1", &[&sa, &sb]));
    }
    let d = g.sub(a, b)?;
    let d = g.abs(d);
    Ok(g.mean(d))
}

/// Mean over Gaussians of the product of their three scales, from `[N, 3]`
/// log-scales.
pub fn volume_var(g: &mut Graph, log_scale: Var) -> Result<Var> {
    let s = g.sum_axis(log_scale, 1)?;
    let v = g.exp(s);
    Ok(g.mean(v))
}

/// `L1 + lambda_ssim * (1 - SSIM) + gamma * mean volume`.
pub fn gs_photometric_loss_var(
    g: &mut Graph,
    render: Var,
    target: Var,
    log_scale: Var,
    lambda_ssim: f64,
    gamma: f64,
) -> Result<Var> {
    let l1 = l1_var(g, render, target)?;
    let s = ssim_var(g, render, target)?;
    let dssim = g.neg(s);
    let dssim = g.add_scalar(dssim, 1.0);
    let dssim = g.scale(dssim, lambda_ssim);
    let vol = volume_var(g, log_scale)?;
    let vol = g.scale(vol, gamma);
    let out = g.add(l1, dssim)?;
    g.add(out, vol)
}

/// `(1 - lambda) * L1 + lambda * (1 - SSIM)`.
pub fn gs_image_loss_var(g: &mut Graph, render: Var, target: Var, lambda: f64) -> Result<Var> {
    let l1 = l1_var(g, render, target)?;
    let l1 = g.scale(l1, 1.0 - lambda);
    let s = ssim_var(g, render, target)?;
    let dssim = g.neg(s);
    let dssim = g.add_scalar(dssim, 1.0);
    let dssim = g.scale(dssim, lambda);
    g.add(l1, dssim)
}

fn image_pair(g: &mut Graph, a: &Image, b: &Image, op: &'static str) -> Result<(Var, Var)> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, &[&a.shape(), &b.shape()]));
    }
    Ok((g.constant(&a.shape(), a.data.clone())?, g.constant(&b.shape(), b.data.clone())?))
}

pub fn l1(a: &Image, b: &Image) -> Result<f64> {
    let mut g = Graph::new();
    let (va, vb) = image_pair(&mut g, a, b, "l1")?;
    let v = l1_var(&mut g, va, vb)?;
    Ok(g.item(v))
}

pub fn mean_volume(gs: &GaussianSet) -> f64 {
    let n = gs.len().max(1) as f64;
    gs.log_scale.chunks_exact(3).map(|s| (s[0] + s[1] + s[2]).exp()).sum::<f64>() / n
}

pub fn gs_photometric_loss(
    render: &Image,
    target: &Image,
    gs: &GaussianSet,
    lambda_ssim: f64,
    gamma: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let (va, vb) = image_pair(&mut g, render, target, "gs_photometric_loss")?;
    let ls = g.constant(&[gs.len(), 3], gs.log_scale.clone())?;
    let v = gs_photometric_loss_var(&mut g, va, vb, ls, lambda_ssim, gamma)?;
    Ok(g.item(v))
}

pub fn gs_image_loss(render: &Image, target: &Image, lambda: f64) -> Result<f64> {
    let mut g = Graph::new();
    let (va, vb) = image_pair(&mut g, render, target, "gs_image_loss")?;
    let v = gs_image_loss_var(&mut g, va, vb, lambda)?;
    Ok(g.item(v))
}

/// Symmetric Chamfer between Gaussian centers and a reconstructed cloud.
pub fn gs_point_loss(p_gs: &PointCloud, p_rec: &PointCloud) -> Result<f64> {
    chamfer(p_gs, p_rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gsplat::SSIM_C1;

    #[test]
    fn identical_images_zero_loss() {
        let a = Image::filled(12, 12, [0.3, 0.5, 0.9]);
        let gs = GaussianSet::new(vec![0.0; 3], vec![1.0, 0.0, 0.0, 0.0], vec![0.0; 3], vec![0.0; 3], vec![0.0])
            .unwrap();
        assert!(gs_photometric_loss(&a, &a, &gs, 0.2, 0.0).unwrap().abs() < 1e-12);
        assert!(gs_image_loss(&a, &a, 0.2).unwrap().abs() < 1e-12);
    }

    #[test]
    fn volume_term_is_scale_product() {
        let a = Image::filled(12, 12, [0.3; 3]);
        let ls = vec![1f64.ln(), 2f64.ln(), 3f64.ln()];
        let gs = GaussianSet::new(vec![0.0; 3], vec![1.0, 0.0, 0.0, 0.0], ls, vec![0.0; 3], vec![0.0]).unwrap();
        assert!((gs_photometric_loss(&a, &a, &gs, 0.0, 1.0).unwrap() - 6.0).abs() < 1e-12);
    }

    #[test]
    fn image_loss_limits() {
        let a = Image::filled(12, 12, [0.0; 3]);
        let b = Image::filled(12, 12, [1.0; 3]);
        assert!((gs_image_loss(&a, &b, 0.0).unwrap() - l1(&a, &b).unwrap()).abs() < 1e-15);
        let expect = 1.0 - SSIM_C1 / (1.0 + SSIM_C1);
        assert!((gs_image_loss(&a, &b, 1.0).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn point_loss_singletons() {
        let a = PointCloud::new(vec![[0.0; 3]]).unwrap();
        let b = PointCloud::new(vec![[1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(gs_point_loss(&a, &b).unwrap(), 2.0);
        assert_eq!(gs_point_loss(&a, &a).unwrap(), 0.0);
    }
}
