//! Synthetic box-and-plane scenes with analytic ground truth, plus RGB-D
//! frame ingestion.

mod raycast;
mod rgbd;

use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use raycast::{render_ground_truth, FrameRecord, AMBIENT, LIGHT_DIR};
pub use rgbd::{back_project, load_rgbd_frames, load_scene_dir, write_scene_dir, SceneDir};

use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::pointcloud::{Point3, PointCloud};

const EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxSpec {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub albedo: [f64; 3],
}

/// Axis-aligned rectangle at `offset` along `axis` (0 = x, 1 = y, 2 = z),
/// spanning `min..max` in the two remaining axes (in increasing axis order).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RectSpec {
    pub axis: usize,
    pub offset: f64,
    pub min: [f64; 2],
    pub max: [f64; 2],
    pub albedo: [f64; 3],
}

/// Scene description; the room spans `[0, room]` with z up.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSpec {
    pub room: [f64; 3],
    /// Adds a floor and four walls.
    pub walls: bool,
    pub boxes: Vec<BoxSpec>,
    pub rects: Vec<RectSpec>,
    /// Extra boxes placed on the floor at seeded random positions.
    pub random_boxes: usize,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            room: [4.0, 3.0, 2.5],
            walls: true,
            boxes: Vec::new(),
            rects: Vec::new(),
            random_boxes: 3,
            seed: 0,
        }
    }
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scene spec serializes")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    Box { min: Point3, max: Point3, albedo: [f64; 3] },
    Rect(RectSpec),
}

impl Primitive {
    pub fn albedo(&self) -> [f64; 3] {
        match self {
            Primitive::Box { albedo, .. } => *albedo,
            Primitive::Rect(r) => r.albedo,
        }
    }

    /// Flat faces making up the surface.
    pub fn faces(&self) -> Vec<RectSpec> {
        match self {
            Primitive::Rect(r) => vec![r.clone()],
            Primitive::Box { min, max, albedo } => {
                let mut out = Vec::with_capacity(6);
                for axis in 0..3 {
                    let (a, b) = other_axes(axis);
                    for offset in [min[axis], max[axis]] {
                        out.push(RectSpec {
                            axis,
                            offset,
                            min: [min[a], min[b]],
                            max: [max[a], max[b]],
                            albedo: *albedo,
                        });
                    }
                }
                out
            }
        }
    }
}

pub(crate) fn other_axes(axis: usize) -> (usize, usize) {
    match axis {
        0 => (1, 2),
        1 => (0, 2),
        _ => (0, 1),
    }
}

pub(crate) fn rect_area(r: &RectSpec) -> f64 {
    (r.max[0] - r.min[0]) * (r.max[1] - r.min[1])
}

/// Primitives ready for raycasting and surface sampling.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub room: [f64; 3],
    pub primitives: Vec<Primitive>,
}

fn check_albedo(a: &[f64; 3]) -> Result<()> {
    if a.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid(format!("albedo {a:?} outside [0, 1]")));
    }
    Ok(())
}

/// Expands `spec` into primitives and validates them against the room.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    let room = spec.room;
    if room.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
        return Err(Error::invalid(format!("room extents {room:?} must be positive")));
    }
    let mut primitives = Vec::new();
    if spec.walls {
        let [sx, sy, sz] = room;
        let wall = |axis: usize, offset: f64, max: [f64; 2], albedo: [f64; 3]| {
            Primitive::Rect(RectSpec {
                axis,
                offset,
                min: [0.0, 0.0],
                max,
                albedo,
            })
        };
        primitives.push(wall(2, 0.0, [sx, sy], [0.55, 0.45, 0.35]));
        primitives.push(wall(0, 0.0, [sy, sz], [0.75, 0.72, 0.65]));
        primitives.push(wall(0, sx, [sy, sz], [0.6, 0.68, 0.75]));
        primitives.push(wall(1, 0.0, [sx, sz], [0.7, 0.7, 0.55]));
        primitives.push(wall(1, sy, [sx, sz], [0.62, 0.7, 0.6]));
    }
    for b in &spec.boxes {
        primitives.push(Primitive::Box {
            min: b.min,
            max: b.max,
            albedo: b.albedo,
        });
    }
    primitives.extend(spec.rects.iter().cloned().map(Primitive::Rect));
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for _ in 0..spec.random_boxes {
        let size = [
            rng.gen_range(0.2..0.35) * room[0],
            rng.gen_range(0.2..0.35) * room[1],
            rng.gen_range(0.15..0.45) * room[2],
        ];
        let x = rng.gen_range(0.0..room[0] - size[0]);
        let y = rng.gen_range(0.0..room[1] - size[1]);
        let albedo = [rng.gen_range(0.1..0.95), rng.gen_range(0.1..0.95), rng.gen_range(0.1..0.95)];
        primitives.push(Primitive::Box {
            min: [x, y, 0.0],
            max: [x + size[0], y + size[1], size[2]],
            albedo,
        });
    }
    if primitives.is_empty() {
        return Err(Error::invalid("scene has no primitives"));
    }
    for p in &primitives {
        check_albedo(&p.albedo())?;
        for f in p.faces() {
            let (a, b) = other_axes(f.axis);
            let inside = |v: f64, axis: usize| v >= -EPS && v <= room[axis] + EPS;
            let ok = inside(f.offset, f.axis)
                && inside(f.min[0], a)
                && inside(f.max[0], a)
                && inside(f.min[1], b)
                && inside(f.max[1], b)
                && f.min[0] <= f.max[0]
                && f.min[1] <= f.max[1];
            if !ok {
                return Err(Error::invalid(format!("primitive {p:?} leaves the room {room:?}")));
            }
        }
    }
    Ok(Scene { room, primitives })
}

impl Scene {
    /// `count` cameras on a ring inside the room, all looking at a point
    /// near the floor center.
    pub fn ring_cameras(&self, count: usize, width: usize, height: usize, focal: f64) -> Result<Vec<CameraModel>> {
        let [sx, sy, sz] = self.room;
        let target = [sx / 2.0, sy / 2.0, 0.25 * sz];
        (0..count)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / count.max(1) as f64 + 0.3;
                let eye = [sx / 2.0 + 0.4 * sx * t.cos(), sy / 2.0 + 0.4 * sy * t.sin(), 0.7 * sz];
                CameraModel::look_at(eye, target, [0.0, 0.0, 1.0], focal, width, height)
            })
            .collect()
    }
}

/// Area-weighted uniform samples over every primitive face.
pub fn sample_point_cloud(scene: &Scene, count: usize, seed: u64) -> Result<PointCloud> {
    if count == 0 {
        return Err(Error::invalid("sample count must be positive"));
    }
    let faces: Vec<RectSpec> = scene.primitives.iter().flat_map(Primitive::faces).collect();
    let areas: Vec<f64> = faces.iter().map(rect_area).collect();
    let pick = WeightedIndex::new(&areas).map_err(|e| Error::invalid(format!("face areas: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = (0..count)
        .map(|_| {
            let f = &faces[pick.sample(&mut rng)];
            let (a, b) = other_axes(f.axis);
            let mut p = [0.0; 3];
            p[f.axis] = f.offset;
            p[a] = f.min[0] + rng.gen::<f64>() * (f.max[0] - f.min[0]);
            p[b] = f.min[1] + rng.gen::<f64>() * (f.max[1] - f.min[1]);
            p
        })
        .collect();
    PointCloud::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_box() -> SceneSpec {
        SceneSpec {
            room: [2.0, 2.0, 2.0],
            walls: false,
            boxes: vec![BoxSpec {
                min: [0.5; 3],
                max: [1.5; 3],
                albedo: [0.8, 0.2, 0.2],
            }],
            random_boxes: 0,
            seed: 7,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_generation() {
        let mut spec = unit_box();
        spec.random_boxes = 4;
        assert_eq!(generate_scene(&spec).unwrap(), generate_scene(&spec).unwrap());
    }

    #[test]
    fn empty_spec_errors() {
        let spec = SceneSpec {
            walls: false,
            random_boxes: 0,
            ..Default::default()
        };
        assert!(generate_scene(&spec).is_err());
    }

    #[test]
    fn random_boxes_stay_inside() {
        let spec = SceneSpec {
            random_boxes: 5,
            seed: 11,
            ..Default::default()
        };
        let scene = generate_scene(&spec).unwrap();
        assert_eq!(scene.primitives.len(), 10);
    }

    #[test]
    fn box_outside_room_rejected() {
        let mut spec = unit_box();
        spec.boxes[0].max = [2.5, 1.0, 1.0];
        assert!(generate_scene(&spec).is_err());
    }

    #[test]
    fn samples_lie_on_plane() {
        let spec = SceneSpec {
            room: [1.0, 1.0, 1.0],
            walls: false,
            rects: vec![RectSpec {
                axis: 2,
                offset: 0.25,
                min: [0.0, 0.0],
                max: [1.0, 1.0],
                albedo: [0.5; 3],
            }],
            random_boxes: 0,
            ..Default::default()
        };
        let pc = sample_point_cloud(&generate_scene(&spec).unwrap(), 4, 3).unwrap();
        assert_eq!(pc.len(), 4);
        assert!(pc.points().iter().all(|p| p[2] == 0.25));
    }

    #[test]
    fn toml_round_trip() {
        let spec = unit_box();
        assert_eq!(SceneSpec::from_toml(&spec.to_toml()).unwrap(), spec);
    }
}
