//! On-disk RGB-D frame layout:
//!
//! ```text
//! <dir>/frames/NNNN.ppm   (or .png)
//! <dir>/depth/NNNN.png    16-bit millimeters (or NNNN.raw, little-endian u16)
//! <dir>/cams/NNNN.txt     camera record
//! <dir>/cloud.ply         optional point cloud
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::FrameRecord;
use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::image::{read_depth_png, read_depth_raw, write_depth_png, Image};
use crate::pointcloud::ply::{read_ply, write_ply, PlyFormat};
use crate::pointcloud::PointCloud;

/// Frames of one scene plus its optional reference cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneDir {
    pub frames: Vec<FrameRecord>,
    pub cloud: Option<PointCloud>,
}

/// World-space points for every pixel with positive depth.
pub fn back_project(frame: &FrameRecord) -> Result<PointCloud> {
    let cam = &frame.camera;
    let mut pts = Vec::new();
    for v in 0..cam.height {
        for u in 0..cam.width {
            let d = frame.depth[v * cam.width + u];
            if d > 0.0 {
                pts.push(cam.unproject([u as f64, v as f64], d));
            }
        }
    }
    PointCloud::new(pts)
}

fn mkdir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

/// Writes frames (and optionally a cloud) in the layout above.
pub fn write_scene_dir(dir: impl AsRef<Path>, frames: &[FrameRecord], cloud: Option<&PointCloud>) -> Result<()> {
    let dir = dir.as_ref();
    for sub in ["frames", "depth", "cams"] {
        mkdir(&dir.join(sub))?;
    }
    for (i, f) in frames.iter().enumerate() {
        let stem = format!("{i:04}");
        f.image.write_ppm(dir.join("frames").join(format!("{stem}.ppm")))?;
        write_depth_png(
            dir.join("depth").join(format!("{stem}.png")),
            &f.depth,
            f.camera.width,
            f.camera.height,
        )?;
        f.camera.write(dir.join("cams").join(format!("{stem}.txt")))?;
    }
    if let Some(c) = cloud {
        write_ply(dir.join("cloud.ply"), c, PlyFormat::BinaryLittleEndian)?;
    }
    Ok(())
}

fn first_existing(candidates: [PathBuf; 2]) -> Option<PathBuf> {
    candidates.into_iter().find(|p| p.is_file())
}

fn read_frames(dir: &Path) -> Result<Vec<FrameRecord>> {
    let cams = dir.join("cams");
    let entries = fs::read_dir(&cams).map_err(|e| Error::io(&cams, e))?;
    let mut stems: Vec<String> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    stems.sort();
    if stems.is_empty() {
        return Err(Error::parse(&cams, "cams", "no camera records"));
    }
    stems
        .iter()
        .map(|stem| {
            let cam_path = cams.join(format!("{stem}.txt"));
            let camera = CameraModel::read(&cam_path)?;
            let img_path = first_existing([
                dir.join("frames").join(format!("{stem}.ppm")),
                dir.join("frames").join(format!("{stem}.png")),
            ])
            .ok_or_else(|| Error::parse(dir.join("frames"), "image", format!("missing image for frame {stem}")))?;
            let image = Image::read(&img_path)?;
            let depth_png = dir.join("depth").join(format!("{stem}.png"));
            let depth_raw = dir.join("depth").join(format!("{stem}.raw"));
            let (depth, depth_path) = if depth_png.is_file() {
                let (d, w, h) = read_depth_png(&depth_png)?;
                if (w, h) != (camera.width, camera.height) {
                    return Err(Error::parse(&depth_png, "extent", format!("{w}x{h} differs from camera")));
                }
                (d, depth_png)
            } else if depth_raw.is_file() {
                (read_depth_raw(&depth_raw, camera.width, camera.height)?, depth_raw)
            } else {
                return Err(Error::parse(dir.join("depth"), "depth", format!("missing depth for frame {stem}")));
            };
            if (image.width, image.height) != (camera.width, camera.height) {
                return Err(Error::parse(&img_path, "extent", "image size differs from camera"));
            }
            FrameRecord::new(image, depth, camera).map_err(|e| Error::parse(&depth_path, "depth", e.to_string()))
        })
        .collect()
}

/// Loads every frame and its back-projected cloud.
pub fn load_rgbd_frames(dir: impl AsRef<Path>) -> Result<Vec<(FrameRecord, PointCloud)>> {
    let dir = dir.as_ref();
    read_frames(dir)?
        .into_iter()
        .map(|f| {
            let pc = back_project(&f).map_err(|_| Error::parse(dir, "depth", "frame has no valid depth"))?;
            Ok((f, pc))
        })
        .collect()
}

/// Loads frames plus `cloud.ply` when present.
pub fn load_scene_dir(dir: impl AsRef<Path>) -> Result<SceneDir> {
    let dir = dir.as_ref();
    let frames = read_frames(dir)?;
    let ply = dir.join("cloud.ply");
    let cloud = if ply.is_file() { Some(read_ply(&ply)?) } else { None };
    Ok(SceneDir { frames, cloud })
}
