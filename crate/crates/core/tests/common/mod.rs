//! Brute-force reference implementations used as test oracles.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatmae::camera::CameraModel;
use splatmae::gsplat::GaussianSet;
use splatmae::image::Image;

pub type P3 = [f64; 3];

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn sq_dist(a: &P3, b: &P3) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    d[0] * d[0] + d[1] * d[1] + d[2] * d[2]
}

/// Random points on a coarse lattice so that distance ties occur.
pub fn lattice_points(r: &mut ChaCha8Rng, n: usize) -> Vec<P3> {
    (0..n)
        .map(|_| [0, 1, 2].map(|_| r.gen_range(-6i32..=6) as f64 * 0.25))
        .collect()
}

pub fn uniform_points(r: &mut ChaCha8Rng, n: usize) -> Vec<P3> {
    (0..n).map(|_| [0, 1, 2].map(|_| r.gen_range(-1.0..1.0))).collect()
}

/// Symmetric Chamfer distance: mean squared nearest distance in both
/// directions, summed.
pub fn brute_chamfer(a: &[P3], b: &[P3]) -> f64 {
    let directed = |x: &[P3], y: &[P3]| {
        let mut s = 0.0;
        for p in x {
            let mut best = f64::INFINITY;
            for q in y {
                best = best.min(sq_dist(p, q));
            }
            s += best;
        }
        s / x.len() as f64
    };
    directed(a, b) + directed(b, a)
}

/// k nearest indices by (distance, index), closest first.
pub fn brute_knn(refs: &[P3], q: &P3, k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = refs.iter().enumerate().map(|(i, r)| (sq_dist(q, r), i)).collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    all.into_iter().take(k.min(refs.len())).map(|(_, i)| i).collect()
}

/// Farthest-point sampling that recomputes every distance to the chosen
/// set from scratch, starting at index 0 with ties to the lowest index.
pub fn brute_fps(pts: &[P3], count: usize) -> Vec<usize> {
    let mut chosen = vec![0];
    while chosen.len() < count.min(pts.len()) {
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, p) in pts.iter().enumerate() {
            let d = chosen.iter().map(|&c| sq_dist(p, &pts[c])).fold(f64::INFINITY, f64::min);
            if d > best.0 {
                best = (d, i);
            }
        }
        chosen.push(best.1);
    }
    chosen
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

type M3 = [[f64; 3]; 3];

fn mat_mul(a: &M3, b: &M3) -> M3 {
    let mut o = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                o[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    o
}

fn transpose(a: &M3) -> M3 {
    let mut o = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            o[i][j] = a[j][i];
        }
    }
    o
}

/// Rotates `v` by the unit quaternion `q = (w, x, y, z)` as `q v q*`.
fn quat_rotate(q: [f64; 4], v: P3) -> P3 {
    let n = (q.iter().map(|c| c * c).sum::<f64>()).sqrt();
    let [w, x, y, z] = q.map(|c| c / n);
    let mul = |a: [f64; 4], b: [f64; 4]| {
        [
            a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
            a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
            a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
            a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
        ]
    };
    let r = mul(mul([w, x, y, z], [0.0, v[0], v[1], v[2]]), [w, -x, -y, -z]);
    [r[1], r[2], r[3]]
}

/// A Gaussian projected to the image plane, computed independently of the
/// library's projection code.
#[derive(Clone, Debug)]
pub struct NaiveSplat {
    pub index: usize,
    pub depth: f64,
    pub mean: [f64; 2],
    pub conic: [f64; 3],
    pub color: P3,
    pub opacity: f64,
}

pub const DILATION: f64 = 0.3;
pub const ALPHA_MIN: f64 = 1.0 / 255.0;
pub const ALPHA_MAX: f64 = 0.99;
pub const T_MIN: f64 = 1e-4;

pub fn naive_project(gs: &GaussianSet, cam: &CameraModel) -> Vec<NaiveSplat> {
    let mut out = Vec::new();
    for i in 0..gs.len() {
        let q = [0, 1, 2, 3].map(|k| gs.quat[i * 4 + k]);
        let s = [0, 1, 2].map(|k| gs.log_scale[i * 3 + k].exp());
        let mu = [0, 1, 2].map(|k| gs.mu[i * 3 + k]);
        // Sigma = sum_k s_k^2 a_k a_k^T over the rotated principal axes.
        let mut sigma = [[0.0; 3]; 3];
        for (k, e) in [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]].iter().enumerate() {
            let a = quat_rotate(q, *e);
            for r in 0..3 {
                for c in 0..3 {
                    sigma[r][c] += s[k] * s[k] * a[r] * a[c];
                }
            }
        }
        let w = cam.rotation;
        let t: P3 = [0, 1, 2].map(|r| (0..3).map(|c| w[r][c] * mu[c]).sum::<f64>() + cam.translation[r]);
        if t[2] <= 1e-4 {
            continue;
        }
        let sigma_cam = mat_mul(&mat_mul(&w, &sigma), &transpose(&w));
        let j = [
            [cam.fx / t[2], 0.0, -cam.fx * t[0] / (t[2] * t[2])],
            [0.0, cam.fy / t[2], -cam.fy * t[1] / (t[2] * t[2])],
            [0.0, 0.0, 0.0],
        ];
        let c2 = mat_mul(&mat_mul(&j, &sigma_cam), &transpose(&j));
        let (a, b, c) = (c2[0][0] + DILATION, c2[0][1], c2[1][1] + DILATION);
        let det = a * c - b * b;
        if det <= 0.0 {
            continue;
        }
        let mean = [cam.fx * t[0] / t[2] + cam.cx, cam.fy * t[1] / t[2] + cam.cy];
        // Cull when the center is over three standard deviations (along the
        // major axis) outside the frame.
        let lmax = 0.5 * (a + c) + (0.25 * (a - c) * (a - c) + b * b).sqrt();
        let r3 = 3.0 * lmax.sqrt();
        let (wf, hf) = (cam.width as f64, cam.height as f64);
        if mean[0] < -r3 || mean[0] > wf + r3 || mean[1] < -r3 || mean[1] > hf + r3 {
            continue;
        }
        out.push(NaiveSplat {
            index: i,
            depth: t[2],
            mean,
            conic: [c / det, -b / det, a / det],
            color: [0, 1, 2].map(|k| sigmoid(gs.color_logit[i * 3 + k])),
            opacity: sigmoid(gs.opacity_logit[i]),
        });
    }
    out
}

/// Per-pixel output of the naive compositor.
pub struct NaiveRender {
    pub image: Image,
    pub weight_sum: Vec<f64>,
    pub transmittance: Vec<f64>,
}

/// Composites every projected Gaussian at every pixel, front to back, with
/// no tiling or bounding boxes. Pixel `(x, y)` is sampled at its integer
/// coordinates.
pub fn naive_render(gs: &GaussianSet, cam: &CameraModel, alpha_min: f64, t_min: f64) -> NaiveRender {
    let mut splats = naive_project(gs, cam);
    splats.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap().then(a.index.cmp(&b.index)));
    let (w, h) = (cam.width, cam.height);
    let mut data = vec![0.0; w * h * 3];
    let mut weight_sum = vec![0.0; w * h];
    let mut transmittance = vec![1.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let mut t = 1.0;
            for s in &splats {
                let (dx, dy) = (x as f64 - s.mean[0], y as f64 - s.mean[1]);
                let q = s.conic[0] * dx * dx + 2.0 * s.conic[1] * dx * dy + s.conic[2] * dy * dy;
                let alpha = (s.opacity * (-0.5 * q).exp()).min(ALPHA_MAX);
                if alpha < alpha_min {
                    continue;
                }
                for k in 0..3 {
                    data[p * 3 + k] += s.color[k] * alpha * t;
                }
                weight_sum[p] += alpha * t;
                t *= 1.0 - alpha;
                if t < t_min {
                    break;
                }
            }
            transmittance[p] = t;
        }
    }
    NaiveRender {
        image: Image::new(w, h, data).unwrap(),
        weight_sum,
        transmittance,
    }
}

/// Random Gaussians in front of an identity camera, some straddling or
/// beyond the frame edges.
pub fn random_gaussians(r: &mut ChaCha8Rng, n: usize) -> GaussianSet {
    let mut mu = Vec::new();
    let mut quat = Vec::new();
    let mut log_scale = Vec::new();
    let mut color = Vec::new();
    let mut opacity = Vec::new();
    for _ in 0..n {
        let z = r.gen_range(1.0..4.0);
        mu.extend([r.gen_range(-0.8..0.8) * z, r.gen_range(-0.8..0.8) * z, z]);
        quat.extend([0; 4].map(|_| r.gen_range(-1.0..1.0)));
        log_scale.extend([0; 3].map(|_| r.gen_range(-3.0..-0.8)));
        color.extend([0; 3].map(|_| r.gen_range(-3.0..3.0)));
        opacity.push(r.gen_range(-4.0..5.0));
    }
    GaussianSet::new(mu, quat, log_scale, color, opacity).unwrap()
}

pub fn random_camera(r: &mut ChaCha8Rng, max_side: usize) -> CameraModel {
    let w = r.gen_range(4..=max_side);
    let h = r.gen_range(4..=max_side);
    let f = r.gen_range(0.6..1.4) * w as f64;
    CameraModel::identity(f, f, (w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, w, h).unwrap()
}
