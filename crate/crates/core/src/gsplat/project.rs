use super::covariance::{build_covariance, covariance_vjp};
use crate::camera::{mat_t_vec, CameraModel, Mat3, Z_NEAR};
use crate::error::Result;

/// Pixel-space variance added to every projected covariance.
pub const DILATION: f64 = 0.3;

/// A Gaussian projected onto the image plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Splat2D {
    pub index: usize,
    pub mean: [f64; 2],
    /// Upper triangle `(xx, xy, yy)` of the dilated 2D covariance.
    pub cov: [f64; 3],
    /// Upper triangle of the inverse covariance.
    pub conic: [f64; 3],
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    /// Camera-space center.
    pub p_cam: [f64; 3],
}

impl Splat2D {
    pub fn max_eigenvalue(&self) -> f64 {
        let [a, b, c] = self.cov;
        let mid = 0.5 * (a + c);
        mid + (mid * mid - (a * c - b * b)).max(0.0).sqrt()
    }
}

/// Parameters of a single Gaussian, activated.
#[derive(Clone, Copy, Debug)]
pub struct GaussianView {
    pub mu: [f64; 3],
    pub quat: [f64; 4],
    pub log_scale: [f64; 3],
    pub color: [f64; 3],
    pub opacity: f64,
}

/// `T = J W`, the 2x3 map from world-frame offsets to pixel offsets.
fn jw(cam: &CameraModel, t: &[f64; 3]) -> [[f64; 3]; 2] {
    let [x, y, z] = *t;
    let j = [[cam.fx / z, 0.0, -cam.fx * x / (z * z)], [0.0, cam.fy / z, -cam.fy * y / (z * z)]];
    let w = &cam.rotation;
    let mut out = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..3 {
            out[r][c] = (0..3).map(|k| j[r][k] * w[k][c]).sum();
        }
    }
    out
}

/// Projects one Gaussian; `None` if it is behind the camera or more than
/// three standard deviations outside the frame.
pub fn project_gaussian(g: &GaussianView, index: usize, cam: &CameraModel) -> Result<Option<Splat2D>> {
    let cov3 = build_covariance(&g.quat, &g.log_scale)?;
    let t = cam.to_camera(&g.mu);
    if t[2] <= Z_NEAR {
        return Ok(None);
    }
    let tm = jw(cam, &t);
    let mut cov = [0.0; 3];
    let mut full = [[0.0; 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += tm[a][i] * cov3[i][j] * tm[b][j];
                }
            }
            full[a][b] = s;
        }
    }
    cov[0] = full[0][0] + DILATION;
    cov[1] = 0.5 * (full[0][1] + full[1][0]);
    cov[2] = full[1][1] + DILATION;
    let det = cov[0] * cov[2] - cov[1] * cov[1];
    if det <= 0.0 || !det.is_finite() {
        return Ok(None);
    }
    let conic = [cov[2] / det, -cov[1] / det, cov[0] / det];
    let mean = [cam.fx * t[0] / t[2] + cam.cx, cam.fy * t[1] / t[2] + cam.cy];
    let splat = Splat2D {
        index,
        mean,
        cov,
        conic,
        depth: t[2],
        color: g.color,
        opacity: g.opacity,
        p_cam: t,
    };
    let sigma3 = 3.0 * splat.max_eigenvalue().sqrt();
    let (w, h) = (cam.width as f64, cam.height as f64);
    if mean[0] < -sigma3 || mean[0] > w + sigma3 || mean[1] < -sigma3 || mean[1] > h + sigma3 {
        return Ok(None);
    }
    Ok(Some(splat))
}

/// Gradient of a loss with respect to one splat's screen-space quantities.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SplatGrad {
    pub mean: [f64; 2],
    /// Derivatives with respect to the conic entries `(A, B, C)` of
    /// `A dx^2 + 2 B dx dy + C dy^2`.
    pub conic: [f64; 3],
    pub color: [f64; 3],
    pub opacity: f64,
}

impl SplatGrad {
    pub fn add(&mut self, o: &SplatGrad) {
        for k in 0..2 {
            self.mean[k] += o.mean[k];
        }
        for k in 0..3 {
            self.conic[k] += o.conic[k];
            self.color[k] += o.color[k];
        }
        self.opacity += o.opacity;
    }
}

/// Gradients with respect to the raw per-Gaussian parameters (colors and
/// opacity are still in activated space here).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GaussianGrad {
    pub mu: [f64; 3],
    pub quat: [f64; 4],
    pub log_scale: [f64; 3],
    pub color: [f64; 3],
    pub opacity: f64,
}

/// Chains screen-space gradients back through projection and covariance.
pub fn project_vjp(g: &GaussianView, splat: &Splat2D, cam: &CameraModel, d: &SplatGrad) -> Result<GaussianGrad> {
    let [a, b, c] = splat.conic;
    // Full symmetric derivative w.r.t. the conic matrix; B sits in both
    // off-diagonal slots.
    let gc = [[d.conic[0], 0.5 * d.conic[1]], [0.5 * d.conic[1], d.conic[2]]];
    let conic = [[a, b], [b, c]];
    // d cov = -conic * G * conic
    let mut gcov = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            let mut s = 0.0;
            for k in 0..2 {
                for l in 0..2 {
                    s += conic[i][k] * gc[k][l] * conic[l][j];
                }
            }
            gcov[i][j] = -s;
        }
    }
    let t = splat.p_cam;
    let tm = jw(cam, &t);
    let cov3 = build_covariance(&g.quat, &g.log_scale)?;
    // cov2 = T cov3 T^T: dcov3 = T^T G T, dT = 2 G T cov3 (G, cov3 symmetric).
    let mut dcov3: Mat3 = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut s = 0.0;
            for p in 0..2 {
                for q in 0..2 {
                    s += tm[p][i] * gcov[p][q] * tm[q][j];
                }
            }
            dcov3[i][j] = s;
        }
    }
    let mut dtm = [[0.0; 3]; 2];
    for p in 0..2 {
        for j in 0..3 {
            let mut s = 0.0;
            for q in 0..2 {
                for k in 0..3 {
                    s += gcov[p][q] * tm[q][k] * cov3[k][j];
                }
            }
            dtm[p][j] = 2.0 * s;
        }
    }
    // T = J W  =>  dJ = dT W^T.
    let w = &cam.rotation;
    let mut dj = [[0.0; 3]; 2];
    for p in 0..2 {
        for k in 0..3 {
            dj[p][k] = (0..3).map(|c| dtm[p][c] * w[k][c]).sum();
        }
    }
    let [x, y, z] = t;
    let (fx, fy) = (cam.fx, cam.fy);
    let (z2, z3) = (z * z, z * z * z);
    let mut dt = [0.0; 3];
    dt[0] += dj[0][2] * (-fx / z2);
    dt[1] += dj[1][2] * (-fy / z2);
    dt[2] += dj[0][0] * (-fx / z2) + dj[0][2] * (2.0 * fx * x / z3) + dj[1][1] * (-fy / z2)
        + dj[1][2] * (2.0 * fy * y / z3);
    dt[0] += d.mean[0] * fx / z;
    dt[1] += d.mean[1] * fy / z;
    dt[2] += -d.mean[0] * fx * x / z2 - d.mean[1] * fy * y / z2;
    let dmu = mat_t_vec(w, &dt);
    let (dq, dlog) = covariance_vjp(&g.quat, &g.log_scale, &dcov3)?;
    Ok(GaussianGrad {
        mu: dmu,
        quat: dq,
        log_scale: dlog,
        color: d.color,
        opacity: d.opacity,
    })
}
