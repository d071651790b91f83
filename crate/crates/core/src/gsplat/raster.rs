//! Tiled front-to-back alpha compositing and its backward pass.

use rayon::prelude::*;

use super::project::{project_gaussian, project_vjp, GaussianGrad, Splat2D, SplatGrad};
use super::GaussianSet;
use crate::autodiff::sigmoid;
use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderSettings {
    /// Splats whose effective alpha falls below this are skipped.
    pub alpha_min: f64,
    /// Compositing stops once transmittance drops below this.
    pub transmittance_min: f64,
    pub alpha_max: f64,
    pub tile: usize,
}

impl Default for RenderSettings {
    fn default() -> Self {
        Self {
            alpha_min: 1.0 / 255.0,
            transmittance_min: 1e-4,
            alpha_max: 0.99,
            tile: 16,
        }
    }
}

impl RenderSettings {
    /// No alpha skipping and no early termination.
    pub fn exact() -> Self {
        Self {
            alpha_min: 0.0,
            transmittance_min: 0.0,
            ..Self::default()
        }
    }
}

/// Forward render plus what the backward pass needs.
#[derive(Clone, Debug)]
pub struct Rendered {
    pub image: Image,
    /// Per-pixel sum of compositing weights `alpha_i * T_i`.
    pub weight_sum: Vec<f64>,
    /// Per-pixel transmittance left after compositing.
    pub transmittance: Vec<f64>,
    /// Visible splats, sorted front to back (ties by Gaussian index).
    pub splats: Vec<Splat2D>,
    tiles: Vec<Vec<u32>>,
    tiles_x: usize,
    settings: RenderSettings,
}

/// Gradients with respect to the raw parameters of a [`GaussianSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSetGrad {
    pub mu: Vec<f64>,
    pub quat: Vec<f64>,
    pub log_scale: Vec<f64>,
    pub color_logit: Vec<f64>,
    pub opacity_logit: Vec<f64>,
}

impl GaussianSetGrad {
    pub fn zeros(n: usize) -> Self {
        Self {
            mu: vec![0.0; n * 3],
            quat: vec![0.0; n * 4],
            log_scale: vec![0.0; n * 3],
            color_logit: vec![0.0; n * 3],
            opacity_logit: vec![0.0; n],
        }
    }
}

fn influence_radius(s: &Splat2D, settings: &RenderSettings) -> f64 {
    if settings.alpha_min <= 0.0 {
        return f64::INFINITY;
    }
    // Beyond this radius opacity * exp(power) < alpha_min for any pixel.
    (2.0 * s.max_eigenvalue() * (s.opacity / settings.alpha_min).ln()).max(0.0).sqrt() + 1e-6
}

#[derive(Clone, Copy)]
struct Contribution {
    pos: usize,
    alpha: f64,
    t_before: f64,
    w: f64,
    clamped: bool,
    dx: f64,
    dy: f64,
}

fn composite_pixel(
    splats: &[Splat2D],
    list: &[u32],
    px: f64,
    py: f64,
    settings: &RenderSettings,
    mut visit: impl FnMut(Contribution),
) -> f64 {
    let mut t = 1.0;
    for &pos in list {
        let s = &splats[pos as usize];
        let (dx, dy) = (px - s.mean[0], py - s.mean[1]);
        let [a, b, c] = s.conic;
        let power = -0.5 * (a * dx * dx + 2.0 * b * dx * dy + c * dy * dy);
        let w = power.exp();
        let raw = s.opacity * w;
        let clamped = raw > settings.alpha_max;
        let alpha = if clamped { settings.alpha_max } else { raw };
        if alpha < settings.alpha_min {
            continue;
        }
        visit(Contribution {
            pos: pos as usize,
            alpha,
            t_before: t,
            w,
            clamped,
            dx,
            dy,
        });
        t *= 1.0 - alpha;
        if t < settings.transmittance_min {
            break;
        }
    }
    t
}

impl GaussianSet {
    /// Projects and culls every Gaussian, returning splats front to back.
    pub fn project_all(&self, cam: &CameraModel) -> Result<Vec<Splat2D>> {
        let projected: Vec<Option<Splat2D>> = (0..self.len())
            .into_par_iter()
            .map(|i| project_gaussian(&self.view(i), i, cam))
            .collect::<Result<_>>()?;
        let mut splats: Vec<Splat2D> = projected.into_iter().flatten().collect();
        splats.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
        Ok(splats)
    }
}

/// Renders `gs` from `cam` on a black background.
pub fn rasterize(gs: &GaussianSet, cam: &CameraModel, settings: &RenderSettings) -> Result<Rendered> {
    if gs.is_empty() {
        return Err(Error::invalid("rasterize: no Gaussians"));
    }
    gs.validate()?;
    let (w, h, tile) = (cam.width, cam.height, settings.tile.max(1));
    let splats: Vec<Splat2D> = gs
        .project_all(cam)?
        .into_iter()
        .filter(|s| s.opacity >= settings.alpha_min)
        .collect();
    let (tiles_x, tiles_y) = (w.div_ceil(tile), h.div_ceil(tile));
    let mut tiles: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (pos, s) in splats.iter().enumerate() {
        let r = influence_radius(s, settings);
        let x0 = (s.mean[0] - r).ceil().max(0.0);
        let x1 = (s.mean[0] + r).floor().min(w as f64 - 1.0);
        let y0 = (s.mean[1] - r).ceil().max(0.0);
        let y1 = (s.mean[1] + r).floor().min(h as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            continue;
        }
        let (tx0, tx1) = (x0 as usize / tile, x1 as usize / tile);
        let (ty0, ty1) = (y0 as usize / tile, y1 as usize / tile);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                tiles[ty * tiles_x + tx].push(pos as u32);
            }
        }
    }

    let tile_out: Vec<Vec<(usize, [f64; 3], f64, f64)>> = (0..tiles.len())
        .into_par_iter()
        .map(|ti| {
            let (tx, ty) = (ti % tiles_x, ti / tiles_x);
            let mut out = Vec::with_capacity(tile * tile);
            for y in ty * tile..((ty + 1) * tile).min(h) {
                for x in tx * tile..((tx + 1) * tile).min(w) {
                    let mut rgb = [0.0; 3];
                    let mut wsum = 0.0;
                    let t = composite_pixel(&splats, &tiles[ti], x as f64, y as f64, settings, |c| {
                        let wt = c.alpha * c.t_before;
                        let col = splats[c.pos].color;
                        for k in 0..3 {
                            rgb[k] += col[k] * wt;
                        }
                        wsum += wt;
                    });
                    out.push((y * w + x, rgb, wsum, t));
                }
            }
            out
        })
        .collect();

    let mut data = vec![0.0; w * h * 3];
    let mut weight_sum = vec![0.0; w * h];
    let mut transmittance = vec![1.0; w * h];
    for (p, rgb, ws, t) in tile_out.into_iter().flatten() {
        data[p * 3..p * 3 + 3].copy_from_slice(&rgb);
        weight_sum[p] = ws;
        transmittance[p] = t;
    }
    Ok(Rendered {
        image: Image::new(w, h, data)?,
        weight_sum,
        transmittance,
        splats,
        tiles,
        tiles_x,
        settings: *settings,
    })
}

impl Rendered {
    /// Gradient of a loss with respect to the parameters of `gs`, given the
    /// gradient `d_image` with respect to the rendered image.
    pub fn backward(&self, gs: &GaussianSet, cam: &CameraModel, d_image: &[f64]) -> Result<GaussianSetGrad> {
        let (w, h) = (cam.width, cam.height);
        if d_image.len() != w * h * 3 {
            return Err(Error::shape("rasterize_backward", &[&[h, w, 3], &[d_image.len()]]));
        }
        let tile = self.settings.tile.max(1);
        let settings = self.settings;
        let splats = &self.splats;
        let per_tile: Vec<Vec<SplatGrad>> = (0..self.tiles.len())
            .into_par_iter()
            .map(|ti| {
                let list = &self.tiles[ti];
                let mut local = vec![SplatGrad::default(); list.len()];
                if list.is_empty() {
                    return local;
                }
                let slot_of = |pos: usize| list.binary_search(&(pos as u32)).expect("splat in tile");
                let (tx, ty) = (ti % self.tiles_x, ti / self.tiles_x);
                let mut contrib: Vec<Contribution> = Vec::new();
                for y in ty * tile..((ty + 1) * tile).min(h) {
                    for x in tx * tile..((tx + 1) * tile).min(w) {
                        let p = y * w + x;
                        let g = [d_image[p * 3], d_image[p * 3 + 1], d_image[p * 3 + 2]];
                        if g == [0.0; 3] {
                            continue;
                        }
                        contrib.clear();
                        composite_pixel(splats, list, x as f64, y as f64, &settings, |c| contrib.push(c));
                        let mut suffix = [0.0; 3];
                        for c in contrib.iter().rev() {
                            let s = &splats[c.pos];
                            let sg = &mut local[slot_of(c.pos)];
                            let wt = c.alpha * c.t_before;
                            let mut d_alpha = 0.0;
                            for k in 0..3 {
                                sg.color[k] += g[k] * wt;
                                d_alpha += g[k] * (s.color[k] * c.t_before - suffix[k] / (1.0 - c.alpha));
                                suffix[k] += s.color[k] * wt;
                            }
                            if c.clamped {
                                continue;
                            }
                            sg.opacity += d_alpha * c.w;
                            let d_power = d_alpha * s.opacity * c.w;
                            let [a, b, cc] = s.conic;
                            sg.mean[0] += d_power * (a * c.dx + b * c.dy);
                            sg.mean[1] += d_power * (b * c.dx + cc * c.dy);
                            sg.conic[0] += d_power * (-0.5 * c.dx * c.dx);
                            sg.conic[1] += d_power * (-c.dx * c.dy);
                            sg.conic[2] += d_power * (-0.5 * c.dy * c.dy);
                        }
                    }
                }
                local
            })
            .collect();

        let mut splat_grads = vec![SplatGrad::default(); splats.len()];
        for (list, local) in self.tiles.iter().zip(&per_tile) {
            for (&pos, g) in list.iter().zip(local) {
                splat_grads[pos as usize].add(g);
            }
        }
        let chained: Vec<GaussianGrad> = splats
            .par_iter()
            .zip(splat_grads.par_iter())
            .map(|(s, d)| project_vjp(&gs.view(s.index), s, cam, d))
            .collect::<Result<_>>()?;

        let mut out = GaussianSetGrad::zeros(gs.len());
        for (s, gg) in splats.iter().zip(&chained) {
            let i = s.index;
            for k in 0..3 {
                out.mu[i * 3 + k] += gg.mu[k];
                out.log_scale[i * 3 + k] += gg.log_scale[k];
                let c = sigmoid(gs.color_logit[i * 3 + k]);
                out.color_logit[i * 3 + k] += gg.color[k] * c * (1.0 - c);
            }
            for k in 0..4 {
                out.quat[i * 4 + k] += gg.quat[k];
            }
            let a = sigmoid(gs.opacity_logit[i]);
            out.opacity_logit[i] += gg.opacity * a * (1.0 - a);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(opacity_logit: f64, color: [f64; 3]) -> GaussianSet {
        GaussianSet::new(
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0, 0.0],
            vec![-2.0; 3],
            color.iter().map(|c| (c / (1.0 - c)).ln()).collect(),
            vec![opacity_logit],
        )
        .unwrap()
    }

    #[test]
    fn opaque_splat_saturates_at_alpha_max() {
        let cam = CameraModel::identity(20.0, 20.0, 4.0, 4.0, 9, 9).unwrap();
        let gs = single(12.0, [0.2, 0.6, 0.8]);
        let r = rasterize(&gs, &cam, &RenderSettings::default()).unwrap();
        let p = r.image.pixel(4, 4);
        for (got, c) in p.iter().zip([0.2, 0.6, 0.8]) {
            assert!((got - 0.99 * c).abs() < 1e-9);
        }
    }

    #[test]
    fn two_coincident_half_alpha_splats() {
        // Opacity 0.5 at the center pixel gives alpha 0.5 each.
        let cam = CameraModel::identity(20.0, 20.0, 4.0, 4.0, 9, 9).unwrap();
        let gs = GaussianSet::new(
            vec![0.0, 0.0, 1.0, 0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            vec![-2.0; 6],
            vec![2.0, -1.0, 0.0, -2.0, 1.0, 0.5],
            vec![0.0, 0.0],
        )
        .unwrap();
        let r = rasterize(&gs, &cam, &RenderSettings::default()).unwrap();
        let c1 = [0, 1, 2].map(|k| sigmoid(gs.color_logit[k]));
        let c2 = [0, 1, 2].map(|k| sigmoid(gs.color_logit[3 + k]));
        let p = r.image.pixel(4, 4);
        for k in 0..3 {
            assert!((p[k] - (0.5 * c1[k] + 0.25 * c2[k])).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_set_errors() {
        let cam = CameraModel::identity(20.0, 20.0, 4.0, 4.0, 9, 9).unwrap();
        let gs = GaussianSet::new(vec![], vec![], vec![], vec![], vec![]).unwrap();
        assert!(rasterize(&gs, &cam, &RenderSettings::default()).is_err());
    }

    #[test]
    fn weights_plus_transmittance_is_one() {
        let cam = CameraModel::identity(20.0, 20.0, 4.0, 4.0, 9, 9).unwrap();
        let gs = single(1.0, [0.3, 0.3, 0.3]);
        let r = rasterize(&gs, &cam, &RenderSettings::exact()).unwrap();
        for (ws, t) in r.weight_sum.iter().zip(&r.transmittance) {
            assert!((ws + t - 1.0).abs() < 1e-12);
        }
    }
}
