//! Transformer building blocks over graph vars.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::Result;

/// Allocates named, randomly initialized parameters.
pub(crate) struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: ChaCha8Rng,
}

impl Init<'_> {
    fn add(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> ParamId {
        let t = Tensor::new(shape, data).expect("init shape").with_grad();
        self.store.add(name, t)
    }

    pub fn xavier(&mut self, name: &str, fan_in: usize, fan_out: usize) -> ParamId {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| self.rng.gen_range(-a..a)).collect();
        self.add(name, &[fan_in, fan_out], data)
    }

    pub fn normal(&mut self, name: &str, shape: &[usize], std: f64) -> ParamId {
        let dist = Normal::new(0.0, std).expect("positive std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        self.add(name, shape, data)
    }

    pub fn constant(&mut self, name: &str, shape: &[usize], v: f64) -> ParamId {
        let n = shape.iter().product();
        self.add(name, shape, vec![v; n])
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Linear {
    w: ParamId,
    b: ParamId,
}

impl Linear {
    pub fn new(init: &mut Init, name: &str, fan_in: usize, fan_out: usize) -> Self {
        Self {
            w: init.xavier(&format!("{name}.weight"), fan_in, fan_out),
            b: init.constant(&format!("{name}.bias"), &[1, fan_out], 0.0),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let y = g.matmul(x, p[self.w.0])?;
        g.add(y, p[self.b.0])
    }
}

#[derive(Clone, Debug)]
pub(crate) struct LayerNorm {
    gamma: ParamId,
    beta: ParamId,
}

impl LayerNorm {
    pub fn new(init: &mut Init, name: &str, dim: usize) -> Self {
        Self {
            gamma: init.constant(&format!("{name}.gamma"), &[1, dim], 1.0),
            beta: init.constant(&format!("{name}.beta"), &[1, dim], 0.0),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let n = g.layer_norm(x)?;
        let y = g.mul(n, p[self.gamma.0])?;
        g.add(y, p[self.beta.0])
    }
}

/// Two linear layers with a GELU between.
#[derive(Clone, Debug)]
pub(crate) struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

impl Mlp {
    pub fn new(init: &mut Init, name: &str, dims: [usize; 3]) -> Self {
        Self {
            fc1: Linear::new(init, &format!("{name}.fc1"), dims[0], dims[1]),
            fc2: Linear::new(init, &format!("{name}.fc2"), dims[1], dims[2]),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let h = self.fc1.forward(g, p, x)?;
        let h = g.gelu(h);
        self.fc2.forward(g, p, h)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Attention {
    qkv: Linear,
    proj: Linear,
    heads: usize,
    dim: usize,
}

impl Attention {
    pub fn new(init: &mut Init, name: &str, dim: usize, heads: usize) -> Self {
        Self {
            qkv: Linear::new(init, &format!("{name}.qkv"), dim, 3 * dim),
            proj: Linear::new(init, &format!("{name}.proj"), dim, dim),
            heads,
            dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let qkv = self.qkv.forward(g, p, x)?;
        let hd = self.dim / self.heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let q = g.slice(qkv, 1, h * hd, hd)?;
            let k = g.slice(qkv, 1, self.dim + h * hd, hd)?;
            let v = g.slice(qkv, 1, 2 * self.dim + h * hd, hd)?;
            let kt = g.transpose(k)?;
            let s = g.matmul(q, kt)?;
            let s = g.scale(s, scale);
            let a = g.softmax(s)?;
            outs.push(g.matmul(a, v)?);
        }
        let o = g.concat(&outs, 1)?;
        self.proj.forward(g, p, o)
    }
}

/// Pre-norm transformer block.
#[derive(Clone, Debug)]
pub(crate) struct Block {
    ln1: LayerNorm,
    attn: Attention,
    ln2: LayerNorm,
    mlp: Mlp,
}

impl Block {
    pub fn new(init: &mut Init, name: &str, dim: usize, heads: usize, mlp_ratio: usize) -> Self {
        Self {
            ln1: LayerNorm::new(init, &format!("{name}.ln1"), dim),
            attn: Attention::new(init, &format!("{name}.attn"), dim, heads),
            ln2: LayerNorm::new(init, &format!("{name}.ln2"), dim),
            mlp: Mlp::new(init, &format!("{name}.mlp"), [dim, dim * mlp_ratio, dim]),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Var> {
        let h = self.ln1.forward(g, p, x)?;
        let h = self.attn.forward(g, p, h)?;
        let x = g.add(x, h)?;
        let h = self.ln2.forward(g, p, x)?;
        let h = self.mlp.forward(g, p, h)?;
        g.add(x, h)
    }
}

/// A stack of blocks followed by a final layer norm.
#[derive(Clone, Debug)]
pub(crate) struct Stack {
    blocks: Vec<Block>,
    norm: LayerNorm,
}

impl Stack {
    pub fn new(init: &mut Init, name: &str, depth: usize, dim: usize, heads: usize, mlp_ratio: usize) -> Self {
        Self {
            blocks: (0..depth)
                .map(|i| Block::new(init, &format!("{name}.{i}"), dim, heads, mlp_ratio))
                .collect(),
            norm: LayerNorm::new(init, &format!("{name}.norm"), dim),
        }
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], mut x: Var) -> Result<Var> {
        for b in &self.blocks {
            x = b.forward(g, p, x)?;
        }
        self.norm.forward(g, p, x)
    }
}
