use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::derive_seed;
use crate::error::{Error, Result};
use crate::pointcloud::{downsample, PointCloud};
use crate::scene::{
    back_project, generate_scene, load_scene_dir, render_ground_truth, sample_point_cloud, write_scene_dir,
    FrameRecord, SceneSpec,
};

/// Cap on the cloud kept per scene when it is assembled from depth maps.
const MAX_SCENE_POINTS: usize = 16384;

/// One scene: a reference cloud plus calibrated RGB-D views.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneData {
    pub name: String,
    pub cloud: PointCloud,
    pub frames: Vec<FrameRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub scenes: Vec<SceneData>,
}

impl Dataset {
    /// Seeded box-and-plane scenes rendered at the network's image size.
    pub fn synthetic(cfg: &TrainConfig) -> Result<Self> {
        let syn = &cfg.synthetic;
        let scenes = (0..syn.scenes)
            .map(|s| {
                let spec = SceneSpec {
                    random_boxes: syn.random_boxes,
                    seed: derive_seed(cfg.seed, "scene", s as u64),
                    ..SceneSpec::default()
                };
                let scene = generate_scene(&spec)?;
                let cloud = sample_point_cloud(&scene, syn.points_per_scene, derive_seed(cfg.seed, "cloud", s as u64))?;
                let frames = scene
                    .ring_cameras(syn.views_per_scene, cfg.mae.image_width, cfg.mae.image_height, syn.focal)?
                    .iter()
                    .map(|cam| render_ground_truth(&scene, cam))
                    .collect::<Result<Vec<_>>>()?;
                Ok(SceneData {
                    name: format!("scene_{s:04}"),
                    cloud,
                    frames,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { scenes })
    }

    /// Reads a single scene directory (one holding `cams/`) or a directory
    /// of scene directories, visited in name order.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let dirs = if dir.join("cams").is_dir() {
            vec![dir.to_path_buf()]
        } else {
            let mut subs: Vec<_> = std::fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.join("cams").is_dir())
                .collect();
            subs.sort();
            subs
        };
        if dirs.is_empty() {
            return Err(Error::invalid(format!("{}: no scene directories found", dir.display())));
        }
        let scenes = dirs
            .iter()
            .map(|d| {
                let sd = load_scene_dir(d)?;
                let cloud = match sd.cloud {
                    Some(c) => c,
                    None => {
                        let mut pts = Vec::new();
                        for f in &sd.frames {
                            pts.extend_from_slice(back_project(f)?.points());
                        }
                        downsample(&PointCloud::new(pts)?, MAX_SCENE_POINTS)?
                    }
                };
                let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                Ok(SceneData {
                    name,
                    cloud,
                    frames: sd.frames,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { scenes })
    }

    /// Writes one scene directory per scene under `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        for s in &self.scenes {
            write_scene_dir(dir.join(&s.name), &s.frames, Some(&s.cloud))?;
        }
        Ok(())
    }

    /// `(scene, view)` pairs in scene-major order.
    pub fn examples(&self) -> Vec<(usize, usize)> {
        self.scenes
            .iter()
            .enumerate()
            .flat_map(|(s, sc)| (0..sc.frames.len()).map(move |v| (s, v)))
            .collect()
    }

    /// Checks that every frame matches the network's image size.
    pub fn check_image_size(&self, width: usize, height: usize) -> Result<()> {
        for s in &self.scenes {
            for (i, f) in s.frames.iter().enumerate() {
                if f.image.width != width || f.image.height != height {
                    return Err(Error::invalid(format!(
                        "{} frame {i} is {}x{}, network expects {width}x{height}",
                        s.name, f.image.width, f.image.height
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Indices `0..n` shuffled by `seed`, truncated to `ceil(fraction * n)`
/// (at least one). Smaller fractions select prefixes of larger ones.
pub fn select_fraction(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!("fraction {fraction} outside (0, 1]")));
    }
    if n == 0 {
        return Err(Error::invalid("no training examples"));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "fraction", 0)));
    let keep = ((fraction * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    idx.truncate(keep);
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mae::MaeConfig;

    fn tiny_cfg() -> TrainConfig {
        let mut cfg = TrainConfig {
            mae: MaeConfig::tiny(),
            ..TrainConfig::default()
        };
        cfg.synthetic.scenes = 2;
        cfg.synthetic.views_per_scene = 2;
        cfg.synthetic.points_per_scene = 1024;
        cfg.synthetic.focal = 24.0;
        cfg
    }

    #[test]
    fn fraction_selects_prefixes() {
        let full = select_fraction(40, 1.0, 9).unwrap();
        let mut sorted = full.clone();
        sorted.sort();
        assert_eq!(sorted, (0..40).collect::<Vec<_>>());
        let quarter = select_fraction(40, 0.25, 9).unwrap();
        assert_eq!(quarter.len(), 10);
        assert_eq!(&full[..10], &quarter[..]);
        assert_eq!(select_fraction(40, 1e-6, 9).unwrap().len(), 1);
        assert!(select_fraction(40, 0.0, 9).is_err());
    }

    #[test]
    fn synthetic_is_deterministic_and_sized() {
        let cfg = tiny_cfg();
        let a = Dataset::synthetic(&cfg).unwrap();
        assert_eq!(a, Dataset::synthetic(&cfg).unwrap());
        assert_eq!(a.examples(), vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        a.check_image_size(32, 32).unwrap();
        assert!(a.check_image_size(64, 32).is_err());
    }

    #[test]
    fn write_then_load() {
        let cfg = tiny_cfg();
        let a = Dataset::synthetic(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        a.write(dir.path()).unwrap();
        let b = Dataset::load(dir.path()).unwrap();
        assert_eq!(b.scenes.len(), 2);
        assert_eq!(b.scenes[1].name, "scene_0001");
        assert_eq!(b.scenes[0].frames.len(), 2);
        assert_eq!(b.scenes[0].cloud.len(), a.scenes[0].cloud.len());
        let single = Dataset::load(dir.path().join("scene_0000")).unwrap();
        assert_eq!(single.scenes.len(), 1);
    }
}
