//! Reference renderer: per-pixel ray casting against analytic faces.

use rayon::prelude::*;

use super::{other_axes, Primitive, RectSpec, Scene};
use crate::camera::{mat_t_vec, CameraModel, Z_NEAR};
use crate::error::{Error, Result};
use crate::image::Image;

pub const AMBIENT: f64 = 0.3;
/// Unit direction towards the light.
pub const LIGHT_DIR: [f64; 3] = [0.267_261_241_912_424_4, 0.534_522_483_824_848_8, 0.801_783_725_737_273_2];

/// One RGB-D frame with its camera.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRecord {
    pub image: Image,
    /// Camera-z depth in meters, row-major; 0 marks no hit.
    pub depth: Vec<f64>,
    pub camera: CameraModel,
}

impl FrameRecord {
    pub fn new(image: Image, depth: Vec<f64>, camera: CameraModel) -> Result<Self> {
        let (w, h) = (camera.width, camera.height);
        if image.width != w || image.height != h || depth.len() != w * h {
            return Err(Error::shape("frame", &[&[h, w], &image.shape(), &[depth.len()]]));
        }
        if depth.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::invalid("depth must be finite and non-negative"));
        }
        Ok(Self { image, depth, camera })
    }
}

fn hit_rect(f: &RectSpec, o: &[f64; 3], d: &[f64; 3]) -> Option<f64> {
    if d[f.axis].abs() < 1e-15 {
        return None;
    }
    let t = (f.offset - o[f.axis]) / d[f.axis];
    if t <= Z_NEAR {
        return None;
    }
    let (a, b) = other_axes(f.axis);
    let (pa, pb) = (o[a] + t * d[a], o[b] + t * d[b]);
    (pa >= f.min[0] && pa <= f.max[0] && pb >= f.min[1] && pb <= f.max[1]).then_some(t)
}

fn shade(albedo: [f64; 3], axis: usize, d: &[f64; 3]) -> [f64; 3] {
    // Two-sided faces: the normal always points back towards the viewer.
    let mut n = [0.0; 3];
    n[axis] = if d[axis] > 0.0 { -1.0 } else { 1.0 };
    let lambert: f64 = (0..3).map(|k| n[k] * LIGHT_DIR[k]).sum::<f64>().max(0.0);
    albedo.map(|a| (a * (AMBIENT + (1.0 - AMBIENT) * lambert)).min(1.0))
}

/// Ray casts every pixel center; misses are black with depth 0.
pub fn render_ground_truth(scene: &Scene, cam: &CameraModel) -> Result<FrameRecord> {
    cam.validate()?;
    let faces: Vec<RectSpec> = scene.primitives.iter().flat_map(Primitive::faces).collect();
    let origin = cam.center();
    let (w, h) = (cam.width, cam.height);
    let rows: Vec<(Vec<f64>, Vec<f64>)> = (0..h)
        .into_par_iter()
        .map(|v| {
            let mut rgb = Vec::with_capacity(w * 3);
            let mut depth = Vec::with_capacity(w);
            for u in 0..w {
                let dc = [(u as f64 - cam.cx) / cam.fx, (v as f64 - cam.cy) / cam.fy, 1.0];
                let d = mat_t_vec(&cam.rotation, &dc);
                let mut best: Option<(f64, &RectSpec)> = None;
                for f in &faces {
                    if let Some(t) = hit_rect(f, &origin, &d) {
                        if best.is_none_or(|(bt, _)| t < bt) {
                            best = Some((t, f));
                        }
                    }
                }
                match best {
                    Some((t, f)) => {
                        rgb.extend(shade(f.albedo, f.axis, &d));
                        depth.push(t);
                    }
                    None => {
                        rgb.extend([0.0; 3]);
                        depth.push(0.0);
                    }
                }
            }
            (rgb, depth)
        })
        .collect();
    let mut data = Vec::with_capacity(w * h * 3);
    let mut depth = Vec::with_capacity(w * h);
    for (r, d) in rows {
        data.extend(r);
        depth.extend(d);
    }
    FrameRecord::new(Image::new(w, h, data)?, depth, cam.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{generate_scene, SceneSpec};

    #[test]
    fn light_is_unit() {
        let n: f64 = LIGHT_DIR.iter().map(|v| v * v).sum();
        assert!((n - 1.0).abs() < 1e-15);
    }

    #[test]
    fn facing_wall_at_two_meters() {
        let spec = SceneSpec {
            room: [4.0, 4.0, 4.0],
            random_boxes: 0,
            ..Default::default()
        };
        let scene = generate_scene(&spec).unwrap();
        // Looking along +x from x = 2 at the far wall x = 4.
        let cam = CameraModel::look_at([2.0, 2.0, 2.0], [4.0, 2.0, 2.0], [0.0, 0.0, 1.0], 20.0, 9, 9).unwrap();
        let f = render_ground_truth(&scene, &cam).unwrap();
        for d in &f.depth {
            assert!((d - 2.0).abs() < 1e-12, "{d}");
        }
        let g = render_ground_truth(&scene, &cam).unwrap();
        assert_eq!(f, g);
    }

    #[test]
    fn misses_are_black_with_zero_depth() {
        let spec = SceneSpec {
            room: [1.0, 1.0, 1.0],
            walls: false,
            rects: vec![RectSpec {
                axis: 2,
                offset: 0.0,
                min: [0.0, 0.0],
                max: [1.0, 1.0],
                albedo: [1.0; 3],
            }],
            random_boxes: 0,
            ..Default::default()
        };
        let scene = generate_scene(&spec).unwrap();
        let cam = CameraModel::look_at([0.5, 0.5, 0.5], [0.5, 0.5, 2.0], [0.0, 1.0, 0.0], 10.0, 5, 5).unwrap();
        let f = render_ground_truth(&scene, &cam).unwrap();
        assert!(f.depth.iter().all(|&d| d == 0.0));
        assert!(f.image.data.iter().all(|&c| c == 0.0));
    }
}
