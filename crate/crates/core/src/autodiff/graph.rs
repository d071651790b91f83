//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node to the [`Graph`]; node indices are therefore a
//! valid topological order and `backward` walks them in reverse. A graph is
//! built per step and discarded afterwards.

use rayon::prelude::*;

use super::tensor::{numel, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An op with a hand-written vector-Jacobian product.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    /// Returns one gradient per input, `None` where no gradient flows.
    fn backward(&self, inputs: &[&[f64]], output: &[f64], grad_out: &[f64]) -> Vec<Option<Vec<f64>>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Neg,
    Exp,
    Log,
    Sigmoid,
    Tanh,
    Gelu,
    Relu,
    Abs,
    Sqrt,
    Square,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Binary {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Reduce {
    Sum,
    Mean,
    Max,
    Min,
}

enum Op {
    Leaf,
    Unary(Var, Unary),
    Binary {
        a: Var,
        b: Var,
        kind: Binary,
        map_a: Option<Vec<usize>>,
        map_b: Option<Vec<usize>>,
    },
    Scale(Var, f64),
    Offset(Var),
    Matmul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Softmax(Var),
    LayerNorm(Var, Vec<f64>),
    SumAll(Var),
    MeanAll(Var),
    ReduceAxis {
        x: Var,
        axis: usize,
        kind: Reduce,
        arg: Vec<usize>,
    },
    Concat {
        xs: Vec<Var>,
        axis: usize,
    },
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    GatherRows {
        x: Var,
        idx: Vec<usize>,
    },
    ScatterRows {
        base: Var,
        src: Var,
        idx: Vec<usize>,
    },
    Custom {
        inputs: Vec<Var>,
        op: Box<dyn CustomOp>,
    },
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
}

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const PAR_MATMUL_FLOPS: usize = 1 << 16;

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Flat input index for each output element under broadcasting.
fn broadcast_map(input: &[usize], out: &[usize]) -> Vec<usize> {
    let n = out.len();
    let offset = n - input.len();
    let mut strides = vec![0usize; n];
    let mut s = 1;
    for i in (0..input.len()).rev() {
        strides[i + offset] = if input[i] == 1 { 0 } else { s };
        s *= input[i];
    }
    let total = numel(out);
    let mut map = Vec::with_capacity(total);
    let mut counter = vec![0usize; n];
    let mut flat = 0usize;
    for _ in 0..total {
        map.push(flat);
        for d in (0..n).rev() {
            counter[d] += 1;
            flat += strides[d];
            if counter[d] < out[d] {
                break;
            }
            flat -= strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    map
}

fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn matmul_kernel(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    let row = |(i, out_row): (usize, &mut [f64])| {
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * m..(p + 1) * m];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    };
    if n * k * m >= PAR_MATMUL_FLOPS && m > 0 {
        out.par_chunks_mut(m).enumerate().for_each(row);
    } else if m > 0 {
        out.chunks_mut(m).enumerate().for_each(row);
    }
    out
}

fn transpose_kernel(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, src: Vec<f64>) {
    match dst {
        Some(d) => d.iter_mut().zip(&src).for_each(|(a, b)| *a += b),
        None => *dst = Some(src),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(&self.nodes[v.0].shape, self.nodes[v.0].value.clone()).expect("node shape")
    }

    /// Records a leaf; gradients are tracked iff the tensor requires them.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        if numel(shape) != data.len() {
            return Err(Error::shape("constant", &[shape, &[data.len()]]));
        }
        Ok(self.push(shape.to_vec(), data, Op::Leaf, false))
    }

    pub fn scalar(&mut self, x: f64) -> Var {
        self.push(vec![1], vec![x], Op::Leaf, false)
    }

    /// A gradient-free copy of `v`.
    pub fn detach(&mut self, v: Var) -> Var {
        let n = &self.nodes[v.0];
        let (shape, value) = (n.shape.clone(), n.value.clone());
        self.push(shape, value, Op::Leaf, false)
    }

    /// Binds every parameter of `store` as a leaf, in id order.
    pub fn bind(&mut self, store: &ParamStore) -> Vec<Var> {
        store.ids().map(|id| self.leaf(store.get(id))).collect()
    }

    /// Adds the gradients of bound leaves into the store's accumulators.
    pub fn accumulate_grads(&self, store: &mut ParamStore, vars: &[Var]) -> Result<()> {
        for (i, &v) in vars.iter().enumerate() {
            if let Some(g) = self.grad(v) {
                store.get_mut(ParamId(i)).accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    // ----- elementwise -------------------------------------------------

    pub fn unary(&mut self, x: Var, kind: Unary) -> Var {
        let f: fn(f64) -> f64 = match kind {
            Unary::Neg => |v| -v,
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
            Unary::Sigmoid => sigmoid,
            Unary::Tanh => f64::tanh,
            Unary::Gelu => gelu,
            Unary::Relu => |v| v.max(0.0),
            Unary::Abs => f64::abs,
            Unary::Sqrt => f64::sqrt,
            Unary::Square => |v| v * v,
        };
        let value = self.value(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(shape, value, Op::Unary(x, kind), rg)
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Neg)
    }
    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Exp)
    }
    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Log)
    }
    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sigmoid)
    }
    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Tanh)
    }
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Gelu)
    }
    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Relu)
    }
    pub fn abs(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Abs)
    }
    pub fn sqrt(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Sqrt)
    }
    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, Unary::Square)
    }

    fn binary(&mut self, a: Var, b: Var, kind: Binary, op: &'static str) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let out_shape = broadcast_shape(&sa, &sb).ok_or_else(|| Error::shape(op, &[&sa, &sb]))?;
        let map_a = (sa != out_shape).then(|| broadcast_map(&sa, &out_shape));
        let map_b = (sb != out_shape).then(|| broadcast_map(&sb, &out_shape));
        let (va, vb) = (self.value(a), self.value(b));
        let f = |x: f64, y: f64| match kind {
            Binary::Add => x + y,
            Binary::Sub => x - y,
            Binary::Mul => x * y,
            Binary::Div => x / y,
        };
        let n = numel(&out_shape);
        let value: Vec<f64> = (0..n)
            .map(|i| {
                let ia = map_a.as_ref().map_or(i, |m| m[i]);
                let ib = map_b.as_ref().map_or(i, |m| m[i]);
                f(va[ia], vb[ib])
            })
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            out_shape,
            value,
            Op::Binary {
                a,
                b,
                kind,
                map_a,
                map_b,
            },
            rg,
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Add, "add")
    }
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Sub, "sub")
    }
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Mul, "mul")
    }
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, Binary::Div, "div")
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).iter().map(|v| v * s).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(shape, value, Op::Scale(x, s), rg)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        let value = self.value(x).iter().map(|v| v + s).collect();
        let shape = self.shape(x).to_vec();
        let rg = self.rg(x);
        self.push(shape, value, Op::Offset(x), rg)
    }

    // ----- linear algebra and layout -----------------------------------

    /// `(n, k) x (k, m) -> (n, m)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", &[sa, sb]));
        }
        let (n, k, m) = (sa[0], sa[1], sb[1]);
        let value = matmul_kernel(self.value(a), self.value(b), n, k, m);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![n, m], value, Op::Matmul(a, b), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(Error::shape("transpose", &[s]));
        }
        let (r, c) = (s[0], s[1]);
        let value = transpose_kernel(self.value(x), r, c);
        let rg = self.rg(x);
        Ok(self.push(vec![c, r], value, Op::Transpose(x), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        if numel(shape) != numel(self.shape(x)) {
            return Err(Error::shape("reshape", &[self.shape(x), shape]));
        }
        let value = self.value(x).to_vec();
        let rg = self.rg(x);
        Ok(self.push(shape.to_vec(), value, Op::Reshape(x), rg))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().ok_or_else(|| Error::shape("softmax", &[&shape]))?;
        let mut value = self.value(x).to_vec();
        for row in value.chunks_mut(c.max(1)) {
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - mx).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let rg = self.rg(x);
        Ok(self.push(shape, value, Op::Softmax(x), rg))
    }

    /// Normalizes the last axis to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, x: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = *shape.last().ok_or_else(|| Error::shape("layer_norm", &[&shape]))?;
        let mut value = self.value(x).to_vec();
        let mut rstd = Vec::with_capacity(value.len() / c.max(1));
        for row in value.chunks_mut(c.max(1)) {
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * r);
            rstd.push(r);
        }
        let rg = self.rg(x);
        Ok(self.push(shape, value, Op::LayerNorm(x, rstd), rg))
    }

    // ----- reductions ----------------------------------------------------

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        let rg = self.rg(x);
        self.push(vec![1], vec![s], Op::SumAll(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(x);
        self.push(vec![1], vec![s], Op::MeanAll(x), rg)
    }

    fn reduce_axis(&mut self, x: Var, axis: usize, kind: Reduce, op: &'static str) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(Error::shape(op, &[&shape, &[axis]]));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let v = self.value(x);
        let mut out = vec![0.0; outer * inner];
        let mut arg = Vec::new();
        if matches!(kind, Reduce::Max | Reduce::Min) {
            arg = vec![0; outer * inner];
        }
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| v[(o * n + j) * inner + i];
                let slot = o * inner + i;
                match kind {
                    Reduce::Sum | Reduce::Mean => {
                        let s: f64 = (0..n).map(at).sum();
                        out[slot] = if kind == Reduce::Mean { s / n as f64 } else { s };
                    }
                    Reduce::Max | Reduce::Min => {
                        let mut best = 0;
                        for j in 1..n {
                            let better = if kind == Reduce::Max {
                                at(j) > at(best)
                            } else {
                                at(j) < at(best)
                            };
                            if better {
                                best = j;
                            }
                        }
                        arg[slot] = best;
                        out[slot] = at(best);
                    }
                }
            }
        }
        let mut out_shape = shape.clone();
        out_shape.remove(axis);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let rg = self.rg(x);
        Ok(self.push(out_shape, out, Op::ReduceAxis { x, axis, kind, arg }, rg))
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, Reduce::Sum, "sum_axis")
    }
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, Reduce::Mean, "mean_axis")
    }
    /// Max along `axis`; ties resolve to the lowest index.
    pub fn max_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, Reduce::Max, "max_axis")
    }
    /// Min along `axis`; ties resolve to the lowest index.
    pub fn min_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, Reduce::Min, "min_axis")
    }

    // ----- structural ----------------------------------------------------

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        let first = self
            .shape(*xs.first().ok_or_else(|| Error::invalid("concat of zero tensors"))?)
            .to_vec();
        if axis >= first.len() {
            return Err(Error::shape("concat", &[&first, &[axis]]));
        }
        let mut total = 0;
        for &x in xs {
            let s = self.shape(x);
            let ok = s.len() == first.len()
                && s.iter().zip(&first).enumerate().all(|(d, (a, b))| d == axis || a == b);
            if !ok {
                let shapes: Vec<&[usize]> = xs.iter().map(|&v| self.shape(v)).collect();
                return Err(Error::shape("concat", &shapes));
            }
            total += s[axis];
        }
        let mut out_shape = first.clone();
        out_shape[axis] = total;
        let (outer, _, inner) = axis_split(&out_shape, axis);
        let mut value = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for &x in xs {
                let n = self.shape(x)[axis] * inner;
                value.extend_from_slice(&self.value(x)[o * n..(o + 1) * n]);
            }
        }
        let rg = xs.iter().any(|&x| self.rg(x));
        Ok(self.push(
            out_shape,
            value,
            Op::Concat {
                xs: xs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    pub fn slice(&mut self, x: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::shape("slice", &[&shape, &[axis, start, len]]));
        }
        let (outer, n, inner) = axis_split(&shape, axis);
        let v = self.value(x);
        let mut value = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * n + start) * inner;
            value.extend_from_slice(&v[base..base + len * inner]);
        }
        let mut out_shape = shape;
        out_shape[axis] = len;
        let rg = self.rg(x);
        Ok(self.push(out_shape, value, Op::Slice { x, axis, start }, rg))
    }

    /// Selects rows (entries along axis 0); indices may repeat.
    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || idx.iter().any(|&i| i >= shape[0]) {
            return Err(Error::shape("gather_rows", &[&shape, idx]));
        }
        let row: usize = shape[1..].iter().product();
        let v = self.value(x);
        let mut value = Vec::with_capacity(idx.len() * row);
        for &i in idx {
            value.extend_from_slice(&v[i * row..(i + 1) * row]);
        }
        let mut out_shape = shape;
        out_shape[0] = idx.len();
        let rg = self.rg(x);
        Ok(self.push(
            out_shape,
            value,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Copy of `base` with rows `idx` replaced by the rows of `src`.
    pub fn scatter_rows(&mut self, base: Var, idx: &[usize], src: Var) -> Result<Var> {
        let (sb, ss) = (self.shape(base).to_vec(), self.shape(src).to_vec());
        let mut seen = vec![false; sb.first().copied().unwrap_or(0)];
        let distinct = idx.iter().all(|&i| i < seen.len() && !std::mem::replace(&mut seen[i], true));
        if sb.is_empty() || ss.len() != sb.len() || ss[0] != idx.len() || ss[1..] != sb[1..] || !distinct {
            return Err(Error::shape("scatter_rows", &[&sb, &ss, idx]));
        }
        let row: usize = sb[1..].iter().product();
        let mut value = self.value(base).to_vec();
        let s = self.value(src);
        for (k, &i) in idx.iter().enumerate() {
            value[i * row..(i + 1) * row].copy_from_slice(&s[k * row..(k + 1) * row]);
        }
        let rg = self.rg(base) || self.rg(src);
        Ok(self.push(
            sb,
            value,
            Op::ScatterRows {
                base,
                src,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Records a node computed outside the graph with a custom backward.
    pub fn custom(
        &mut self,
        inputs: &[Var],
        shape: Vec<usize>,
        value: Vec<f64>,
        op: Box<dyn CustomOp>,
    ) -> Result<Var> {
        if numel(&shape) != value.len() {
            return Err(Error::shape(op.name(), &[&shape, &[value.len()]]));
        }
        let rg = inputs.iter().any(|&x| self.rg(x));
        Ok(self.push(
            shape,
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
        ))
    }

    // ----- backward ------------------------------------------------------

    /// Accumulates d(root)/d(node) into every node that requires grad.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::Backward("graph already differentiated; rebuild it".into()));
        }
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::Backward(format!(
                "root must be scalar, got shape {:?}",
                self.nodes[root.0].shape
            )));
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(root) {
            return Ok(());
        }
        self.grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            let contributions = self.node_vjp(i, &g);
            self.grads[i] = Some(g);
            for (v, c) in contributions {
                if self.nodes[v.0].requires_grad {
                    add_into(&mut self.grads[v.0], c);
                }
            }
        }
        Ok(())
    }

    fn node_vjp(&self, i: usize, g: &[f64]) -> Vec<(Var, Vec<f64>)> {
        let node = &self.nodes[i];
        let y = &node.value;
        match &node.op {
            Op::Leaf => vec![],
            Op::Unary(x, kind) => {
                let xv = self.value(*x);
                let d: Vec<f64> = (0..g.len())
                    .map(|j| {
                        let local = match kind {
                            Unary::Neg => -1.0,
                            Unary::Exp => y[j],
                            Unary::Log => 1.0 / xv[j],
                            Unary::Sigmoid => y[j] * (1.0 - y[j]),
                            Unary::Tanh => 1.0 - y[j] * y[j],
                            Unary::Gelu => gelu_grad(xv[j]),
                            Unary::Relu => (xv[j] > 0.0) as u8 as f64,
                            Unary::Abs => {
                                if xv[j] > 0.0 {
                                    1.0
                                } else if xv[j] < 0.0 {
                                    -1.0
                                } else {
                                    0.0
                                }
                            }
                            Unary::Sqrt => 0.5 / y[j],
                            Unary::Square => 2.0 * xv[j],
                        };
                        g[j] * local
                    })
                    .collect();
                vec![(*x, d)]
            }
            Op::Binary {
                a,
                b,
                kind,
                map_a,
                map_b,
            } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let mut ga = vec![0.0; va.len()];
                let mut gb = vec![0.0; vb.len()];
                for j in 0..g.len() {
                    let ia = map_a.as_ref().map_or(j, |m| m[j]);
                    let ib = map_b.as_ref().map_or(j, |m| m[j]);
                    let (da, db) = match kind {
                        Binary::Add => (1.0, 1.0),
                        Binary::Sub => (1.0, -1.0),
                        Binary::Mul => (vb[ib], va[ia]),
                        Binary::Div => (1.0 / vb[ib], -va[ia] / (vb[ib] * vb[ib])),
                    };
                    ga[ia] += g[j] * da;
                    gb[ib] += g[j] * db;
                }
                vec![(*a, ga), (*b, gb)]
            }
            Op::Scale(x, s) => vec![(*x, g.iter().map(|v| v * s).collect())],
            Op::Offset(x) | Op::Reshape(x) => vec![(*x, g.to_vec())],
            Op::Matmul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (n, k, m) = (sa[0], sa[1], sb[1]);
                let mut out = Vec::new();
                if self.rg(*a) {
                    let bt = transpose_kernel(self.value(*b), k, m);
                    out.push((*a, matmul_kernel(g, &bt, n, m, k)));
                }
                if self.rg(*b) {
                    let at = transpose_kernel(self.value(*a), n, k);
                    out.push((*b, matmul_kernel(&at, g, k, n, m)));
                }
                out
            }
            Op::Transpose(x) => {
                let s = &node.shape;
                vec![(*x, transpose_kernel(g, s[0], s[1]))]
            }
            Op::Softmax(x) => {
                let c = *node.shape.last().unwrap();
                let mut d = vec![0.0; g.len()];
                for ((dr, gr), yr) in d.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)) {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for j in 0..c {
                        dr[j] = yr[j] * (gr[j] - dot);
                    }
                }
                vec![(*x, d)]
            }
            Op::LayerNorm(x, rstd) => {
                let c = *node.shape.last().unwrap();
                let mut d = vec![0.0; g.len()];
                for (r, ((dr, gr), yr)) in d.chunks_mut(c).zip(g.chunks(c)).zip(y.chunks(c)).enumerate() {
                    let mg = gr.iter().sum::<f64>() / c as f64;
                    let mgy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c as f64;
                    for j in 0..c {
                        dr[j] = rstd[r] * (gr[j] - mg - yr[j] * mgy);
                    }
                }
                vec![(*x, d)]
            }
            Op::SumAll(x) => vec![(*x, vec![g[0]; self.value(*x).len()])],
            Op::MeanAll(x) => {
                let n = self.value(*x).len();
                vec![(*x, vec![g[0] / n as f64; n])]
            }
            Op::ReduceAxis { x, axis, kind, arg } => {
                let shape = self.shape(*x);
                let (outer, n, inner) = axis_split(shape, *axis);
                let mut d = vec![0.0; numel(shape)];
                for o in 0..outer {
                    for i in 0..inner {
                        let slot = o * inner + i;
                        match kind {
                            Reduce::Sum | Reduce::Mean => {
                                let s = if *kind == Reduce::Mean { 1.0 / n as f64 } else { 1.0 };
                                for j in 0..n {
                                    d[(o * n + j) * inner + i] = g[slot] * s;
                                }
                            }
                            Reduce::Max | Reduce::Min => {
                                d[(o * n + arg[slot]) * inner + i] = g[slot];
                            }
                        }
                    }
                }
                vec![(*x, d)]
            }
            Op::Concat { xs, axis } => {
                let (outer, _, inner) = axis_split(&node.shape, *axis);
                let total = node.shape[*axis] * inner;
                let mut offset = 0;
                xs.iter()
                    .map(|&x| {
                        let n = self.shape(x)[*axis] * inner;
                        let mut d = Vec::with_capacity(outer * n);
                        for o in 0..outer {
                            let base = o * total + offset;
                            d.extend_from_slice(&g[base..base + n]);
                        }
                        offset += n;
                        (x, d)
                    })
                    .collect()
            }
            Op::Slice { x, axis, start } => {
                let shape = self.shape(*x);
                let (outer, n, inner) = axis_split(shape, *axis);
                let len = node.shape[*axis];
                let mut d = vec![0.0; numel(shape)];
                for o in 0..outer {
                    let base = (o * n + start) * inner;
                    d[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                }
                vec![(*x, d)]
            }
            Op::GatherRows { x, idx } => {
                let shape = self.shape(*x);
                let row: usize = shape[1..].iter().product();
                let mut d = vec![0.0; numel(shape)];
                for (k, &r) in idx.iter().enumerate() {
                    for c in 0..row {
                        d[r * row + c] += g[k * row + c];
                    }
                }
                vec![(*x, d)]
            }
            Op::ScatterRows { base, src, idx } => {
                let row: usize = node.shape[1..].iter().product();
                let mut db = g.to_vec();
                let mut ds = vec![0.0; idx.len() * row];
                for (k, &r) in idx.iter().enumerate() {
                    ds[k * row..(k + 1) * row].copy_from_slice(&g[r * row..(r + 1) * row]);
                    db[r * row..(r + 1) * row].iter_mut().for_each(|v| *v = 0.0);
                }
                vec![(*base, db), (*src, ds)]
            }
            Op::Custom { inputs, op } => {
                let ins: Vec<&[f64]> = inputs.iter().map(|&v| self.value(v)).collect();
                op.backward(&ins, y, g)
                    .into_iter()
                    .zip(inputs)
                    .filter_map(|(d, &v)| d.map(|d| (v, d)))
                    .collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap().with_grad()
    }

    #[test]
    fn matmul_of_ones() {
        let mut g = Graph::new();
        let a = g.constant(&[2, 3], vec![1.0; 6]).unwrap();
        let b = g.constant(&[3, 1], vec![1.0; 3]).unwrap();
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.shape(c), &[2, 1]);
        assert_eq!(g.value(c), &[3.0, 3.0]);
    }

    #[test]
    fn matmul_shape_error_names_op() {
        let mut g = Graph::new();
        let a = g.constant(&[2, 3], vec![1.0; 6]).unwrap();
        let err = g.matmul(a, a).unwrap_err();
        match err {
            Error::Shape { op, shapes } => {
                assert_eq!(op, "matmul");
                assert_eq!(shapes, vec![vec![2, 3], vec![2, 3]]);
            }
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn softmax_uniform() {
        let mut g = Graph::new();
        let x = g.constant(&[3], vec![0.0; 3]).unwrap();
        let y = g.softmax(x).unwrap();
        for v in g.value(y) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut g = Graph::new();
        let x = g.constant(&[2, 4], vec![5.0; 8]).unwrap();
        let y = g.layer_norm(x).unwrap();
        assert!(g.value(y).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn square_sum_gradient() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[3], &[1.0, 2.0, 3.0]));
        let y = g.mul(x, x).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn constant_root_is_noop() {
        let mut g = Graph::new();
        let x = g.constant(&[2], vec![1.0, 2.0]).unwrap();
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert!(g.grad(x).is_none());
    }

    #[test]
    fn backward_errors() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[2], &[1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::Backward(_))));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(Error::Backward(_))));
    }

    #[test]
    fn reused_leaf_accumulates() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[1], &[3.0]));
        let a = g.scale(x, 2.0);
        let b = g.scale(x, 5.0);
        let c = g.add(a, b).unwrap();
        let s = g.sum(c);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[7.0]);
    }

    #[test]
    fn broadcast_bias_add() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[2, 3], &[0.0; 6]));
        let b = g.leaf(&t(&[3], &[1.0, 2.0, 3.0]));
        let y = g.add(x, b).unwrap();
        assert_eq!(g.value(y), &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert_eq!(g.grad(b).unwrap(), &[2.0, 2.0, 2.0]);
        let bad = g.constant(&[4], vec![0.0; 4]).unwrap();
        assert!(g.add(x, bad).is_err());
    }

    #[test]
    fn broadcast_middle_axis() {
        assert_eq!(broadcast_map(&[2, 1], &[2, 3]), vec![0, 0, 0, 1, 1, 1]);
        assert_eq!(broadcast_map(&[3], &[2, 3]), vec![0, 1, 2, 0, 1, 2]);
        assert_eq!(broadcast_shape(&[4, 1, 3], &[5, 1]), Some(vec![4, 5, 3]));
    }

    #[test]
    fn min_axis_ties_pick_lowest_index() {
        let mut g = Graph::new();
        let x = g.leaf(&t(&[1, 3], &[1.0, 1.0, 2.0]));
        let m = g.min_axis(x, 1).unwrap();
        let s = g.sum(m);
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn scatter_and_gather() {
        let mut g = Graph::new();
        let base = g.leaf(&t(&[3, 2], &[0.0; 6]));
        let src = g.leaf(&t(&[1, 2], &[7.0, 8.0]));
        let s = g.scatter_rows(base, &[1], src).unwrap();
        assert_eq!(g.value(s), &[0.0, 0.0, 7.0, 8.0, 0.0, 0.0]);
        let r = g.gather_rows(s, &[1, 1, 2]).unwrap();
        let tot = g.sum(r);
        g.backward(tot).unwrap();
        assert_eq!(g.grad(src).unwrap(), &[2.0, 2.0]);
        assert_eq!(g.grad(base).unwrap(), &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
    }
}
