use super::{dist2, nearest, Point3, PointCloud};
use crate::autodiff::{CustomOp, Graph, Var};
use crate::error::{Error, Result};

fn to_points(flat: &[f64]) -> Vec<Point3> {
    flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
}

/// One-directional mean of squared nearest-neighbor distances, with the
/// matched indices.
fn directed(a: &[Point3], b: &[Point3]) -> (f64, Vec<usize>) {
    let nn = nearest(b, a);
    let s: f64 = a.iter().zip(&nn).map(|(p, &j)| dist2(p, &b[j])).sum();
    (s / a.len() as f64, nn)
}

/// Symmetric Chamfer distance with squared Euclidean norms.
pub fn chamfer(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let (ab, _) = directed(a.points(), b.points());
    let (ba, _) = directed(b.points(), a.points());
    Ok(ab + ba)
}

/// Batched Chamfer node: inputs `[B, n, 3]` and `[B, m, 3]`, output `[B]`.
pub struct ChamferOp {
    batch: usize,
    n: usize,
    m: usize,
    nn_ab: Vec<usize>,
    nn_ba: Vec<usize>,
}

impl CustomOp for ChamferOp {
    fn name(&self) -> &'static str {
        "chamfer"
    }

    fn backward(&self, inputs: &[&[f64]], _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (a, b) = (inputs[0], inputs[1]);
        let (n, m) = (self.n, self.m);
        let mut ga = vec![0.0; a.len()];
        let mut gb = vec![0.0; b.len()];
        for bi in 0..self.batch {
            let (ao, bo) = (bi * n * 3, bi * m * 3);
            let wa = 2.0 * g[bi] / n as f64;
            for i in 0..n {
                let j = self.nn_ab[bi * n + i];
                for c in 0..3 {
                    let d = wa * (a[ao + i * 3 + c] - b[bo + j * 3 + c]);
                    ga[ao + i * 3 + c] += d;
                    gb[bo + j * 3 + c] -= d;
                }
            }
            let wb = 2.0 * g[bi] / m as f64;
            for j in 0..m {
                let i = self.nn_ba[bi * m + j];
                for c in 0..3 {
                    let d = wb * (b[bo + j * 3 + c] - a[ao + i * 3 + c]);
                    gb[bo + j * 3 + c] += d;
                    ga[ao + i * 3 + c] -= d;
                }
            }
        }
        vec![Some(ga), Some(gb)]
    }
}

/// Differentiable Chamfer distance.
///
/// `[n, 3]` and `[m, 3]` inputs give a `[1]` result; `[B, n, 3]` and
/// `[B, m, 3]` give one distance per batch entry.
pub fn chamfer_var(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let (sa, sb) = (g.shape(a).to_vec(), g.shape(b).to_vec());
    let (batch, n, m) = match (sa.as_slice(), sb.as_slice()) {
        ([n, 3], [m, 3]) => (1, *n, *m),
        ([ba, n, 3], [bb, m, 3]) if ba == bb => (*ba, *n, *m),
        _ => return Err(Error::shape("chamfer", &[&sa, &sb])),
    };
    if n == 0 || m == 0 || batch == 0 {
        return Err(Error::EmptyCloud);
    }
    let (va, vb) = (g.value(a), g.value(b));
    let mut out = Vec::with_capacity(batch);
    let mut nn_ab = Vec::with_capacity(batch * n);
    let mut nn_ba = Vec::with_capacity(batch * m);
    for bi in 0..batch {
        let pa = to_points(&va[bi * n * 3..(bi + 1) * n * 3]);
        let pb = to_points(&vb[bi * m * 3..(bi + 1) * m * 3]);
        let (ab, i_ab) = directed(&pa, &pb);
        let (ba, i_ba) = directed(&pb, &pa);
        out.push(ab + ba);
        nn_ab.extend(i_ab);
        nn_ba.extend(i_ba);
    }
    let shape = if sa.len() == 2 { vec![1] } else { vec![batch] };
    g.custom(
        &[a, b],
        shape,
        out,
        Box::new(ChamferOp {
            batch,
            n,
            m,
            nn_ab,
            nn_ba,
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn pc(p: &[Point3]) -> PointCloud {
        PointCloud::new(p.to_vec()).unwrap()
    }

    #[test]
    fn singletons_at_unit_distance() {
        let a = pc(&[[0.0, 0.0, 0.0]]);
        let b = pc(&[[1.0, 0.0, 0.0]]);
        assert_eq!(chamfer(&a, &b).unwrap(), 2.0);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn graph_value_matches_plain() {
        let a = [[0.0, 0.0, 0.0], [1.0, 2.0, 0.5]];
        let b = [[0.2, 0.1, 0.0], [3.0, 0.0, 1.0], [1.0, 1.5, 0.0]];
        let mut g = Graph::new();
        let va = g.leaf(&Tensor::new(&[2, 3], pc(&a).flat()).unwrap().with_grad());
        let vb = g.constant(&[3, 3], pc(&b).flat()).unwrap();
        let c = chamfer_var(&mut g, va, vb).unwrap();
        assert_eq!(g.item(c), chamfer(&pc(&a), &pc(&b)).unwrap());
        g.backward(c).unwrap();
        assert!(g.grad(va).is_some());
        assert!(g.grad(vb).is_none());
    }

    #[test]
    fn shape_errors() {
        let mut g = Graph::new();
        let a = g.constant(&[2, 2], vec![0.0; 4]).unwrap();
        let b = g.constant(&[2, 3], vec![0.0; 6]).unwrap();
        assert!(chamfer_var(&mut g, a, b).is_err());
    }
}
