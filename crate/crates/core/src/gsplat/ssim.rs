//! Windowed SSIM on the autodiff graph, and PSNR.

use crate::autodiff::{CustomOp, Graph, Var};
use crate::error::{Error, Result};
use crate::image::Image;

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;

/// Normalized 1D Gaussian taps. The window shrinks (keeping odd length) for
/// images smaller than 11 pixels.
pub fn blur_kernel(h: usize, w: usize) -> Vec<f64> {
    let mut size = WINDOW.min(h).min(w).max(1);
    if size % 2 == 0 {
        size -= 1;
    }
    let half = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - half;
            (-d * d / (2.0 * SIGMA * SIGMA)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

fn blur_forward(x: &[f64], h: usize, w: usize, c: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ho, wo) = (h + 1 - n, w + 1 - n);
    let mut tmp = vec![0.0; h * wo * c];
    for y in 0..h {
        for xo in 0..wo {
            for (t, kt) in k.iter().enumerate() {
                let src = (y * w + xo + t) * c;
                let dst = (y * wo + xo) * c;
                for ch in 0..c {
                    tmp[dst + ch] += kt * x[src + ch];
                }
            }
        }
    }
    let mut out = vec![0.0; ho * wo * c];
    for yo in 0..ho {
        for (t, kt) in k.iter().enumerate() {
            let src = (yo + t) * wo * c;
            let dst = yo * wo * c;
            for i in 0..wo * c {
                out[dst + i] += kt * tmp[src + i];
            }
        }
    }
    out
}

fn blur_adjoint(g: &[f64], h: usize, w: usize, c: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ho, wo) = (h + 1 - n, w + 1 - n);
    let mut tmp = vec![0.0; h * wo * c];
    for yo in 0..ho {
        for (t, kt) in k.iter().enumerate() {
            let dst = (yo + t) * wo * c;
            let src = yo * wo * c;
            for i in 0..wo * c {
                tmp[dst + i] += kt * g[src + i];
            }
        }
    }
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for xo in 0..wo {
            for (t, kt) in k.iter().enumerate() {
                let dst = (y * w + xo + t) * c;
                let src = (y * wo + xo) * c;
                for ch in 0..c {
                    out[dst + ch] += kt * tmp[src + ch];
                }
            }
        }
    }
    out
}

struct BlurOp {
    h: usize,
    w: usize,
    c: usize,
    kernel: Vec<f64>,
}

impl CustomOp for BlurOp {
    fn name(&self) -> &'static str {
        "gaussian_blur"
    }

    fn backward(&self, _inputs: &[&[f64]], _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(blur_adjoint(g, self.h, self.w, self.c, &self.kernel))]
    }
}

/// Separable Gaussian blur over `[H, W, C]`, valid region only.
fn blur_var(g: &mut Graph, x: Var) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let [h, w, c] = shape[..] else {
        return Err(Error::shape("gaussian_blur", &[&shape]));
    };
    let kernel = blur_kernel(h, w);
    let n = kernel.len();
    let value = blur_forward(g.value(x), h, w, c, &kernel);
    g.custom(&[x], vec![h + 1 - n, w + 1 - n, c], value, Box::new(BlurOp { h, w, c, kernel }))
}

/// Mean SSIM over all channels and window positions; inputs are `[H, W, C]`.
pub fn ssim_var(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let (sa, sb) = (g.shape(a).to_vec(), g.shape(b).to_vec());
    if sa != sb || sa.len() != 3 || sa[0] == 0 || sa[1] == 0 {
        return Err(Error::shape("ssim", &[&sa, &sb]));
    }
    let mu_a = blur_var(g, a)?;
    let mu_b = blur_var(g, b)?;
    let aa = g.mul(a, a)?;
    let bb = g.mul(b, b)?;
    let ab = g.mul(a, b)?;
    let e_aa = blur_var(g, aa)?;
    let e_bb = blur_var(g, bb)?;
    let e_ab = blur_var(g, ab)?;
    let mu_a2 = g.mul(mu_a, mu_a)?;
    let mu_b2 = g.mul(mu_b, mu_b)?;
    let mu_ab = g.mul(mu_a, mu_b)?;
    let var_a = g.sub(e_aa, mu_a2)?;
    let var_b = g.sub(e_bb, mu_b2)?;
    let cov = g.sub(e_ab, mu_ab)?;

    let n1 = g.scale(mu_ab, 2.0);
    let n1 = g.add_scalar(n1, SSIM_C1);
    let n2 = g.scale(cov, 2.0);
    let n2 = g.add_scalar(n2, SSIM_C2);
    let d1 = g.add(mu_a2, mu_b2)?;
    let d1 = g.add_scalar(d1, SSIM_C1);
    let d2 = g.add(var_a, var_b)?;
    let d2 = g.add_scalar(d2, SSIM_C2);
    let num = g.mul(n1, n2)?;
    let den = g.mul(d1, d2)?;
    let map = g.div(num, den)?;
    Ok(g.mean(map))
}

fn check_same(a: &Image, b: &Image, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, &[&a.shape(), &b.shape()]));
    }
    Ok(())
}

/// Structural similarity of two images.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check_same(a, b, "ssim")?;
    let mut g = Graph::new();
    let va = g.constant(&a.shape(), a.data.clone())?;
    let vb = g.constant(&b.shape(), b.data.clone())?;
    let s = ssim_var(&mut g, va, vb)?;
    Ok(g.item(s))
}

/// Peak signal-to-noise ratio with peak 1; `f64::INFINITY` for identical
/// images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    check_same(a, b, "psnr")?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize, phase: f64) -> Image {
        let data = (0..w * h * 3).map(|i| 0.5 + 0.4 * ((i as f64) * 0.37 + phase).sin()).collect();
        Image::new(w, h, data).unwrap()
    }

    #[test]
    fn identical_images_score_one() {
        let a = ramp(16, 12, 0.0);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
    }

    #[test]
    fn black_versus_white() {
        let a = Image::filled(16, 16, [0.0; 3]);
        let b = Image::filled(16, 16, [1.0; 3]);
        let expect = SSIM_C1 / (1.0 + SSIM_C1);
        assert!((ssim(&a, &b).unwrap() - expect).abs() < 1e-12);
        assert!(psnr(&a, &b).unwrap().abs() < 1e-12);
    }

    #[test]
    fn psnr_of_known_mse() {
        let a = Image::filled(4, 4, [0.5; 3]);
        let b = Image::filled(4, 4, [0.6; 3]);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
    }

    #[test]
    fn symmetric() {
        let (a, b) = (ramp(13, 17, 0.0), ramp(13, 17, 1.3));
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_errors() {
        assert!(ssim(&ramp(4, 4, 0.0), &ramp(4, 5, 0.0)).is_err());
    }

    #[test]
    fn small_images_shrink_window() {
        assert_eq!(blur_kernel(4, 20).len(), 3);
        assert_eq!(blur_kernel(5, 20).len(), 5);
        assert!((blur_kernel(64, 64).iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn blur_adjoint_is_transpose() {
        let (h, w, c) = (9, 7, 2);
        let k = blur_kernel(h, w);
        let x: Vec<f64> = (0..h * w * c).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
        let n = k.len();
        let y: Vec<f64> = (0..(h + 1 - n) * (w + 1 - n) * c).map(|i| ((i * 5 % 13) as f64) * 0.1).collect();
        let lhs: f64 = blur_forward(&x, h, w, c, &k).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = blur_adjoint(&y, h, w, c, &k).iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
