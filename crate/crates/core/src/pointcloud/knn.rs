use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use super::{dist2, Point3};

/// Reference sets at or below this size are searched exhaustively.
pub const EXHAUSTIVE_LIMIT: usize = 4096;

#[derive(Clone, Copy, PartialEq)]
struct Cand(f64, usize);

impl Eq for Cand {}

impl Ord for Cand {
    fn cmp(&self, o: &Self) -> Ordering {
        self.0.total_cmp(&o.0).then(self.1.cmp(&o.1))
    }
}

impl PartialOrd for Cand {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}

/// The `k` nearest reference indices for each query, closest first.
/// Distance ties resolve to the lower reference index.
pub fn knn(refs: &[Point3], queries: &[Point3], k: usize) -> Vec<Vec<usize>> {
    let k = k.min(refs.len());
    if refs.len() <= EXHAUSTIVE_LIMIT {
        queries.par_iter().map(|q| knn_exhaustive(refs, q, k)).collect()
    } else {
        let grid = Grid::build(refs, k);
        queries.par_iter().map(|q| grid.knn(refs, q, k)).collect()
    }
}

/// Index of the nearest reference for each query (ties to the lower index).
pub fn nearest(refs: &[Point3], queries: &[Point3]) -> Vec<usize> {
    if refs.len() <= EXHAUSTIVE_LIMIT {
        queries
            .par_iter()
            .map(|q| {
                let mut best = 0;
                let mut best_d = f64::INFINITY;
                for (i, r) in refs.iter().enumerate() {
                    let d = dist2(q, r);
                    if d < best_d {
                        best_d = d;
                        best = i;
                    }
                }
                best
            })
            .collect()
    } else {
        knn(refs, queries, 1).into_iter().map(|v| v[0]).collect()
    }
}

fn knn_exhaustive(refs: &[Point3], q: &Point3, k: usize) -> Vec<usize> {
    let mut all: Vec<Cand> = refs.iter().enumerate().map(|(i, r)| Cand(dist2(q, r), i)).collect();
    if k < all.len() {
        all.select_nth_unstable(k);
        all.truncate(k);
    }
    all.sort_unstable();
    all.into_iter().map(|c| c.1).collect()
}

/// Uniform bucket grid over the reference bounding box.
struct Grid {
    origin: Point3,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<usize>,
    items: Vec<usize>,
}

impl Grid {
    fn build(refs: &[Point3], k: usize) -> Self {
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in refs {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        let extent: Vec<f64> = (0..3).map(|a| (hi[a] - lo[a]).max(1e-9)).collect();
        let volume: f64 = extent.iter().product();
        // Aim for roughly 2k points per occupied cell.
        let target_cells = (refs.len() as f64 / (2.0 * k.max(1) as f64)).max(1.0);
        let mut cell = (volume / target_cells).cbrt();
        let max_extent = extent.iter().cloned().fold(0.0, f64::max);
        cell = cell.max(max_extent / 256.0);
        let dims = [0, 1, 2].map(|a| ((extent[a] / cell).floor() as usize + 1).min(256));
        let ncell = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0usize; ncell + 1];
        let cell_of: Vec<usize> = refs
            .iter()
            .map(|p| {
                let c = Self::coord(&lo, cell, &dims, p);
                (c[2] * dims[1] + c[1]) * dims[0] + c[0]
            })
            .collect();
        for &c in &cell_of {
            counts[c + 1] += 1;
        }
        for i in 0..ncell {
            counts[i + 1] += counts[i];
        }
        let starts = counts.clone();
        let mut fill = counts;
        let mut items = vec![0; refs.len()];
        for (i, &c) in cell_of.iter().enumerate() {
            items[fill[c]] = i;
            fill[c] += 1;
        }
        Self {
            origin: lo,
            cell,
            dims,
            starts,
            items,
        }
    }

    fn coord(lo: &Point3, cell: f64, dims: &[usize; 3], p: &Point3) -> [usize; 3] {
        [0, 1, 2].map(|a| {
            let v = ((p[a] - lo[a]) / cell).floor();
            (v.max(0.0) as usize).min(dims[a] - 1)
        })
    }

    fn knn(&self, refs: &[Point3], q: &Point3, k: usize) -> Vec<usize> {
        let c = Self::coord(&self.origin, self.cell, &self.dims, q);
        // Distance from the query to the boundary of its own cell, per axis.
        let slack = (0..3)
            .map(|a| {
                let lo = self.origin[a] + c[a] as f64 * self.cell;
                (q[a] - lo).min(lo + self.cell - q[a]).max(0.0)
            })
            .fold(f64::INFINITY, f64::min);
        let mut heap: BinaryHeap<Cand> = BinaryHeap::with_capacity(k + 1);
        let max_r = self.dims.iter().copied().max().unwrap();
        for r in 0..=max_r {
            let lo = [0, 1, 2].map(|a| c[a] as isize - r as isize);
            let hi = [0, 1, 2].map(|a| c[a] as isize + r as isize);
            for z in lo[2].max(0)..=hi[2].min(self.dims[2] as isize - 1) {
                for y in lo[1].max(0)..=hi[1].min(self.dims[1] as isize - 1) {
                    for x in lo[0].max(0)..=hi[0].min(self.dims[0] as isize - 1) {
                        let on_shell = x == lo[0] || x == hi[0] || y == lo[1] || y == hi[1] || z == lo[2] || z == hi[2];
                        if !on_shell {
                            continue;
                        }
                        let cell = (z as usize * self.dims[1] + y as usize) * self.dims[0] + x as usize;
                        for &i in &self.items[self.starts[cell]..self.starts[cell + 1]] {
                            let cand = Cand(dist2(q, &refs[i]), i);
                            if heap.len() < k {
                                heap.push(cand);
                            } else if cand < *heap.peek().unwrap() {
                                heap.pop();
                                heap.push(cand);
                            }
                        }
                    }
                }
            }
            if heap.len() == k {
                // Anything outside shell r is at least this far away.
                let bound = r as f64 * self.cell + slack;
                if heap.peek().unwrap().0 < bound * bound {
                    break;
                }
            }
        }
        let mut out = heap.into_vec();
        out.sort_unstable();
        out.into_iter().map(|c| c.1).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn grid_matches_exhaustive() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let refs: Vec<Point3> = (0..6000)
            .map(|_| [rng.gen::<f64>() * 4.0, rng.gen::<f64>() * 3.0, rng.gen::<f64>() * 0.5])
            .collect();
        let queries: Vec<Point3> = (0..50).map(|i| refs[i * 97]).collect();
        let grid = knn(&refs, &queries, 16);
        for (q, got) in queries.iter().zip(&grid) {
            assert_eq!(got, &knn_exhaustive(&refs, q, 16));
        }
        let nn = nearest(&refs, &[[10.0, 10.0, 10.0]]);
        assert_eq!(nn, knn_exhaustive(&refs, &[10.0, 10.0, 10.0], 1));
    }

    #[test]
    fn ties_go_to_lower_index() {
        let refs = [[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert_eq!(knn(&refs, &[[0.0; 3]], 2), vec![vec![0, 1]]);
        assert_eq!(nearest(&refs, &[[0.0; 3]]), vec![0]);
    }
}
