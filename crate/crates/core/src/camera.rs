//! Pinhole camera, point-patch to image-patch alignment and complementary
//! masking.
//!
//! Pixel coordinates are continuous with pixel centers at integer
//! coordinates; a pixel `(u, v)` falls in image patch
//! `floor(v / patch) * cols + floor(u / patch)`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pointcloud::{PatchSet, Point3};

/// Points at or closer than this camera-space depth are invalid.
pub const Z_NEAR: f64 = 1e-4;

pub type Mat3 = [[f64; 3]; 3];

#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    /// World-to-camera rotation (row-major).
    pub rotation: Mat3,
    /// World-to-camera translation.
    pub translation: [f64; 3],
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub pixel: [f64; 2],
    pub depth: f64,
    pub valid: bool,
}

pub(crate) fn mat_vec(m: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|r| m[r][0] * v[0] + m[r][1] * v[1] + m[r][2] * v[2])
}

pub(crate) fn mat_t_vec(m: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|c| m[0][c] * v[0] + m[1][c] * v[1] + m[2][c] * v[2])
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn normalize(a: [f64; 3]) -> Result<[f64; 3]> {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    if n < 1e-12 {
        return Err(Error::invalid("degenerate direction"));
    }
    Ok(a.map(|v| v / n))
}

fn det3(m: &Mat3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        rotation: Mat3,
        translation: [f64; 3],
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            rotation,
            translation,
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::invalid("focal lengths must be positive"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("image extents must be positive"));
        }
        let r = &self.rotation;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| r[i][k] * r[j][k]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > 1e-9 {
                    return Err(Error::invalid("rotation is not orthonormal"));
                }
            }
        }
        if (det3(r) - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("rotation determinant is not +1"));
        }
        Ok(())
    }

    /// Identity pose.
    pub fn identity(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let eye = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        Self::new(fx, fy, cx, cy, eye, [0.0; 3], width, height)
    }

    /// Camera at `eye` looking at `target`; image y points along `-up`.
    pub fn look_at(
        eye: Point3,
        target: Point3,
        up: [f64; 3],
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let fwd = normalize([target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]])?;
        let right = normalize(cross(&fwd, &up))?;
        let down = cross(&fwd, &right);
        let rotation = [right, down, fwd];
        let re = mat_vec(&rotation, &eye);
        let translation = [-re[0], -re[1], -re[2]];
        Self::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            rotation,
            translation,
            width,
            height,
        )
    }

    pub fn to_camera(&self, p: &Point3) -> [f64; 3] {
        let r = mat_vec(&self.rotation, p);
        [r[0] + self.translation[0], r[1] + self.translation[1], r[2] + self.translation[2]]
    }

    pub fn to_world(&self, p_cam: &[f64; 3]) -> Point3 {
        let d = [
            p_cam[0] - self.translation[0],
            p_cam[1] - self.translation[1],
            p_cam[2] - self.translation[2],
        ];
        mat_t_vec(&self.rotation, &d)
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Point3 {
        self.to_world(&[0.0; 3])
    }

    pub fn project_camera(&self, p_cam: &[f64; 3]) -> Projection {
        let z = p_cam[2];
        Projection {
            pixel: [self.fx * p_cam[0] / z + self.cx, self.fy * p_cam[1] / z + self.cy],
            depth: z,
            valid: z > Z_NEAR,
        }
    }

    pub fn project(&self, p_world: &Point3) -> Projection {
        self.project_camera(&self.to_camera(p_world))
    }

    /// World point at `depth` along the ray through `pixel`.
    pub fn unproject(&self, pixel: [f64; 2], depth: f64) -> Point3 {
        let p_cam = [
            (pixel[0] - self.cx) * depth / self.fx,
            (pixel[1] - self.cy) * depth / self.fy,
            depth,
        ];
        self.to_world(&p_cam)
    }

    pub fn in_frame(&self, pixel: [f64; 2]) -> bool {
        pixel[0] >= 0.0 && pixel[1] >= 0.0 && pixel[0] < self.width as f64 && pixel[1] < self.height as f64
    }

    /// Jacobian of the perspective map at camera-space point `p_cam`.
    pub fn projection_jacobian(&self, p_cam: &[f64; 3]) -> Result<[[f64; 3]; 2]> {
        let [x, y, z] = *p_cam;
        if z <= Z_NEAR {
            return Err(Error::invalid(format!("projection_jacobian: depth {z} <= z_near")));
        }
        let z2 = z * z;
        Ok([
            [self.fx / z, 0.0, -self.fx * x / z2],
            [0.0, self.fy / z, -self.fy * y / z2],
        ])
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:.17e} {:.17e} {:.17e} {:.17e}", self.fx, self.fy, self.cx, self.cy);
        for row in &self.rotation {
            let _ = writeln!(s, "{:.17e} {:.17e} {:.17e}", row[0], row[1], row[2]);
        }
        let t = &self.translation;
        let _ = writeln!(s, "{:.17e} {:.17e} {:.17e}", t[0], t[1], t[2]);
        let _ = writeln!(s, "{} {}", self.width, self.height);
        s
    }

    /// Parses the camera text record; `origin` is used in error messages.
    pub fn from_text(text: &str, origin: &Path) -> Result<Self> {
        const FIELDS: [&str; 18] = [
            "fx", "fy", "cx", "cy", "r00", "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22", "tx", "ty", "tz",
            "width", "height",
        ];
        let tokens: Vec<&str> = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace)
            .collect();
        if tokens.len() != FIELDS.len() {
            let field = FIELDS.get(tokens.len()).copied().unwrap_or("trailing");
            return Err(Error::parse(
                origin,
                field,
                format!("expected {} values, found {}", FIELDS.len(), tokens.len()),
            ));
        }
        let mut v = [0.0; 16];
        for i in 0..16 {
            v[i] = tokens[i]
                .parse()
                .map_err(|_| Error::parse(origin, FIELDS[i], format!("not a number: `{}`", tokens[i])))?;
        }
        let dim = |i: usize| -> Result<usize> {
            tokens[i]
                .parse()
                .map_err(|_| Error::parse(origin, FIELDS[i], format!("not an integer: `{}`", tokens[i])))
        };
        let (w, h) = (dim(16)?, dim(17)?);
        let rotation = [[v[4], v[5], v[6]], [v[7], v[8], v[9]], [v[10], v[11], v[12]]];
        Self::new(v[0], v[1], v[2], v[3], rotation, [v[13], v[14], v[15]], w, h)
            .map_err(|e| Error::parse(origin, "camera", e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Image patch containing each point-patch center, or `None` when the
/// center is behind the camera or outside the frame.
pub fn align_patches(
    patches: &PatchSet,
    cam: &CameraModel,
    patch_px: usize,
    grid: (usize, usize),
) -> Result<Vec<Option<usize>>> {
    let (rows, cols) = grid;
    if patch_px == 0 || rows * patch_px != cam.height || cols * patch_px != cam.width {
        return Err(Error::invalid(format!(
            "grid {rows}x{cols} of {patch_px}px patches does not tile a {}x{} image",
            cam.height, cam.width
        )));
    }
    Ok(patches
        .centers
        .iter()
        .map(|c| {
            let p = cam.project(c);
            if !p.valid || !cam.in_frame(p.pixel) {
                return None;
            }
            let (u, v) = (p.pixel[0].floor() as usize, p.pixel[1].floor() as usize);
            Some((v / patch_px) * cols + u / patch_px)
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskPair {
    pub point_visible: Vec<bool>,
    pub image_visible: Vec<bool>,
    /// Set when forced-visible image patches left too few to reach the
    /// requested image mask ratio.
    pub warning: Option<String>,
}

impl MaskPair {
    pub fn masked_points(&self) -> Vec<usize> {
        (0..self.point_visible.len()).filter(|&i| !self.point_visible[i]).collect()
    }
    pub fn visible_points(&self) -> Vec<usize> {
        (0..self.point_visible.len()).filter(|&i| self.point_visible[i]).collect()
    }
    pub fn masked_image(&self) -> Vec<usize> {
        (0..self.image_visible.len()).filter(|&i| !self.image_visible[i]).collect()
    }
    pub fn visible_image(&self) -> Vec<usize> {
        (0..self.image_visible.len()).filter(|&i| self.image_visible[i]).collect()
    }
}

/// `floor(ratio * n)`, tolerant of representation error in `ratio`.
pub fn mask_count(ratio: f64, n: usize) -> usize {
    ((ratio * n as f64) + 1e-9).floor() as usize
}

/// Samples point and image masks such that every masked point patch with a
/// valid alignment leaves its image patch visible.
pub fn complementary_masks(
    alignment: &[Option<usize>],
    m: usize,
    t: usize,
    mask_ratio: f64,
    rng_seed: u64,
) -> Result<MaskPair> {
    if !(mask_ratio > 0.0 && mask_ratio < 1.0) {
        return Err(Error::invalid(format!("mask ratio {mask_ratio} outside (0, 1)")));
    }
    if alignment.len() != m {
        return Err(Error::invalid("alignment length differs from patch count"));
    }
    if alignment.iter().flatten().any(|&i| i >= t) {
        return Err(Error::invalid("alignment index out of image-patch range"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut point_visible = vec![true; m];
    for i in sample(&mut rng, m, mask_count(mask_ratio, m)) {
        point_visible[i] = false;
    }
    let mut forced = vec![false; t];
    for (i, a) in alignment.iter().enumerate() {
        if let (false, Some(j)) = (point_visible[i], a) {
            forced[*j] = true;
        }
    }
    let free: Vec<usize> = (0..t).filter(|&j| !forced[j]).collect();
    let wanted = mask_count(mask_ratio, t);
    let mut warning = None;
    let count = if wanted > free.len() {
        warning = Some(format!(
            "image mask relaxed: {wanted} requested, {} available after {} forced-visible patches",
            free.len(),
            t - free.len()
        ));
        free.len()
    } else {
        wanted
    };
    let mut image_visible = vec![true; t];
    for k in sample(&mut rng, free.len(), count) {
        image_visible[free[k]] = false;
    }
    Ok(MaskPair {
        point_visible,
        image_visible,
        warning,
    })
}
