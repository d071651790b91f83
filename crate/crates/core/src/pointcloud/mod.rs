//! Point sets, farthest-point sampling, kNN patching and Chamfer distance.

mod chamfer;
mod knn;
pub mod ply;

pub use chamfer::{chamfer, chamfer_var, ChamferOp};
pub use knn::{knn, nearest, EXHAUSTIVE_LIMIT};

use crate::error::{Error, Result};

pub type Point3 = [f64; 3];

#[inline]
pub fn dist2(a: &Point3, b: &Point3) -> f64 {
    let (dx, dy, dz) = (a[0] - b[0], a[1] - b[1], a[2] - b[2]);
    dx * dx + dy * dy + dz * dz
}

/// Non-empty set of finite 3D points, in meters.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("point cloud contains non-finite coordinates"));
        }
        Ok(Self { points })
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 3 != 0 {
            return Err(Error::shape("point_cloud", &[&[flat.len()]]));
        }
        Self::new(flat.chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn flat(&self) -> Vec<f64> {
        self.points.iter().flatten().copied().collect()
    }

    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        Self::new(idx.iter().map(|&i| self.points[i]).collect())
    }
}

/// Farthest-point sampling. Starts at index 0; distance ties go to the lowest
/// index. Returns indices in selection order.
pub fn farthest_point_sampling(points: &[Point3], count: usize) -> Vec<usize> {
    let n = points.len();
    if n == 0 || count == 0 {
        return Vec::new();
    }
    let count = count.min(n);
    let mut chosen = Vec::with_capacity(count);
    let mut min_d = vec![f64::INFINITY; n];
    let mut current = 0;
    chosen.push(current);
    while chosen.len() < count {
        let c = points[current];
        let mut best = usize::MAX;
        let mut best_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            let d = dist2(p, &c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        current = best;
        chosen.push(current);
    }
    chosen
}

/// Reduces (or pads) a cloud to exactly `target` points.
///
/// Larger clouds are reduced by FPS; smaller ones are padded by cyclic
/// repetition of the input order.
pub fn downsample(pc: &PointCloud, target: usize) -> Result<PointCloud> {
    if target == 0 {
        return Err(Error::invalid("downsample target must be >= 1"));
    }
    let n = pc.len();
    if n == target {
        return Ok(pc.clone());
    }
    if n > target {
        return pc.select(&farthest_point_sampling(pc.points(), target));
    }
    let idx: Vec<usize> = (0..target).map(|i| i % n).collect();
    pc.select(&idx)
}

/// FPS centers with their k nearest neighbors.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSet {
    pub k: usize,
    pub center_index: Vec<usize>,
    pub centers: Vec<Point3>,
    /// `M * k` member indices, row-major by patch.
    pub members: Vec<usize>,
    /// `M * k * 3` coordinates relative to the patch center.
    pub local_coords: Vec<f64>,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn patch_members(&self, m: usize) -> &[usize] {
        &self.members[m * self.k..(m + 1) * self.k]
    }

    pub fn patch_local(&self, m: usize) -> &[f64] {
        &self.local_coords[m * self.k * 3..(m + 1) * self.k * 3]
    }

    pub fn centers_flat(&self) -> Vec<f64> {
        self.centers.iter().flatten().copied().collect()
    }
}

/// Partitions the cloud into `m` FPS-seeded patches of `k` nearest points.
pub fn fps_knn_patches(pc: &PointCloud, m: usize, k: usize) -> Result<PatchSet> {
    let n = pc.len();
    if m == 0 || k == 0 || m > n || k > n {
        return Err(Error::invalid(format!(
            "fps_knn_patches needs 1 <= M <= N and 1 <= k <= N (M={m}, k={k}, N={n})"
        )));
    }
    let pts = pc.points();
    let center_index = farthest_point_sampling(pts, m);
    let centers: Vec<Point3> = center_index.iter().map(|&i| pts[i]).collect();
    let neighbors = knn(pts, &centers, k);
    let mut members = Vec::with_capacity(m * k);
    let mut local_coords = Vec::with_capacity(m * k * 3);
    for (c, nb) in centers.iter().zip(&neighbors) {
        for &j in nb {
            members.push(j);
            let p = pts[j];
            local_coords.extend_from_slice(&[p[0] - c[0], p[1] - c[1], p[2] - c[2]]);
        }
    }
    Ok(PatchSet {
        k,
        center_index,
        centers,
        members,
        local_coords,
    })
}
