//! Self-describing binary checkpoints.
//!
//! Layout (little-endian): magic `SPLATMAE`, `u32` version, `u32` config
//! length and UTF-8 TOML config, `u32` tensor count, then per tensor a
//! `u32`-prefixed name, `u32` rank, `u64` extents and `f32` values.

use std::fs;
use std::path::Path;

use super::{DualMae, MaeConfig};
use crate::autodiff::{AdamW, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::gsplat::{GaussianSet, PARAM_NAMES};

const MAGIC: &[u8; 8] = b"SPLATMAE";
const VERSION: u32 = 1;
const NET_PREFIX: &str = "net.";
const OPT_STEP: &str = "opt.step";

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    /// TOML text of the network configuration; empty when there is no
    /// network.
    pub config: String,
    pub tensors: Vec<CheckpointTensor>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> std::result::Result<&'a [u8], String> {
        if self.pos + n > self.bytes.len() {
            return Err(format!("truncated while reading {field}"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, field: &str) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, field: &str) -> std::result::Result<String, String> {
        let n = self.u32(field)? as usize;
        String::from_utf8(self.take(n, field)?.to_vec()).map_err(|_| format!("{field} is not UTF-8"))
    }
}

impl Checkpoint {
    pub fn from_model(model: &DualMae) -> Self {
        let mut ck = Self {
            config: model.cfg.to_toml(),
            tensors: Vec::new(),
        };
        for (name, t) in model.params.iter() {
            ck.tensors.push(CheckpointTensor {
                name: format!("{NET_PREFIX}{name}"),
                shape: t.shape().to_vec(),
                data: t.data().iter().map(|&v| v as f32).collect(),
            });
        }
        ck
    }

    pub fn add_gaussians(&mut self, scene: usize, gs: &GaussianSet) {
        let n = gs.len();
        let groups = [
            (&gs.mu, vec![n, 3]),
            (&gs.quat, vec![n, 4]),
            (&gs.log_scale, vec![n, 3]),
            (&gs.color_logit, vec![n, 3]),
            (&gs.opacity_logit, vec![n]),
        ];
        for (name, (data, shape)) in PARAM_NAMES.iter().zip(groups) {
            self.tensors.push(CheckpointTensor {
                name: format!("gs.{scene:04}.{name}"),
                shape,
                data: data.iter().map(|&v| v as f32).collect(),
            });
        }
    }

    /// Stores AdamW moments for the parameters of `store`.
    pub fn add_optimizer(&mut self, opt: &AdamW, store: &ParamStore) {
        let (first, second) = opt.moments();
        if first.len() != store.len() {
            return;
        }
        self.tensors.push(CheckpointTensor {
            name: OPT_STEP.into(),
            shape: vec![1],
            data: vec![opt.step_count() as f32],
        });
        for (prefix, moments) in [("opt.m.", first), ("opt.v.", second)] {
            for ((name, t), m) in store.iter().zip(moments) {
                self.tensors.push(CheckpointTensor {
                    name: format!("{prefix}{name}"),
                    shape: t.shape().to_vec(),
                    data: m.iter().map(|&v| v as f32).collect(),
                });
            }
        }
    }

    /// AdamW resumed from stored moments, matched to `store` by name, or
    /// `None` when the checkpoint holds no optimizer state.
    pub fn optimizer(&self, store: &ParamStore, lr: f64, weight_decay: f64) -> Result<Option<AdamW>> {
        let Some(step) = self.tensors.iter().find(|t| t.name == OPT_STEP) else {
            return Ok(None);
        };
        let find = |name: String, numel: usize| -> Result<Vec<f64>> {
            let t = self
                .tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::invalid(format!("checkpoint lacks `{name}`")))?;
            if t.data.len() != numel {
                return Err(Error::invalid(format!("`{name}` has {} values, expected {numel}", t.data.len())));
            }
            Ok(t.data.iter().map(|&v| v as f64).collect())
        };
        let mut first = Vec::with_capacity(store.len());
        let mut second = Vec::with_capacity(store.len());
        for (name, t) in store.iter() {
            first.push(find(format!("opt.m.{name}"), t.numel())?);
            second.push(find(format!("opt.v.{name}"), t.numel())?);
        }
        let step = step.data.first().copied().unwrap_or(0.0) as u64;
        AdamW::with_state(lr, weight_decay, step, first, second).map(Some)
    }

    pub fn has_network(&self) -> bool {
        self.tensors.iter().any(|t| t.name.starts_with(NET_PREFIX))
    }

    pub fn model(&self) -> Result<DualMae> {
        if !self.has_network() {
            return Err(Error::invalid("checkpoint holds no network parameters"));
        }
        let cfg = MaeConfig::from_toml(&self.config)?;
        let mut store = ParamStore::new();
        for t in self.tensors.iter().filter(|t| t.name.starts_with(NET_PREFIX)) {
            let data = t.data.iter().map(|&v| v as f64).collect();
            store.add(&t.name[NET_PREFIX.len()..], Tensor::new(&t.shape, data)?.with_grad());
        }
        DualMae::with_params(cfg, &store)
    }

    /// Gaussian sets with their scene indices, in scene order.
    pub fn gaussians(&self) -> Result<Vec<(usize, GaussianSet)>> {
        let mut scenes: Vec<&str> = self
            .tensors
            .iter()
            .filter_map(|t| t.name.strip_prefix("gs."))
            .filter_map(|rest| rest.split('.').next())
            .collect();
        scenes.sort();
        scenes.dedup();
        scenes
            .into_iter()
            .map(|s| {
                let index = s
                    .parse::<usize>()
                    .map_err(|_| Error::invalid(format!("bad scene index `{s}` in checkpoint")))?;
                let get = |name: &str| -> Result<Vec<f64>> {
                    let full = format!("gs.{s}.{name}");
                    let t = self
                        .tensors
                        .iter()
                        .find(|t| t.name == full)
                        .ok_or_else(|| Error::invalid(format!("checkpoint lacks `{full}`")))?;
                    Ok(t.data.iter().map(|&v| v as f64).collect())
                };
                let gs = GaussianSet::new(get("mu")?, get("quat")?, get("log_scale")?, get("color_logit")?, get("opacity_logit")?)?;
                Ok((index, gs))
            })
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend(VERSION.to_le_bytes());
        out.extend((self.config.len() as u32).to_le_bytes());
        out.extend(self.config.as_bytes());
        out.extend((self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend((t.name.len() as u32).to_le_bytes());
            out.extend(t.name.as_bytes());
            out.extend((t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend((d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend(v.to_le_bytes());
            }
        }
        out
    }

    fn parse(bytes: &[u8]) -> std::result::Result<Self, (String, String)> {
        let mut r = Reader { bytes, pos: 0 };
        let wrap = |field: &str| {
            let field = field.to_string();
            move |e: String| (field.clone(), e)
        };
        let magic = r.take(8, "magic").map_err(wrap("magic"))?;
        if magic != MAGIC {
            return Err(("magic".into(), "not a checkpoint file".into()));
        }
        let version = r.u32("version").map_err(wrap("version"))?;
        if version != VERSION {
            return Err(("version".into(), format!("unsupported version {version}")));
        }
        let config = r.string("config").map_err(wrap("config"))?;
        let count = r.u32("tensor count").map_err(wrap("tensor count"))?;
        let mut tensors = Vec::with_capacity(count as usize);
        for i in 0..count {
            let name = r.string("tensor name").map_err(wrap(&format!("tensor {i} name")))?;
            let field = format!("tensor `{name}`");
            let rank = r.u32("rank").map_err(wrap(&field))? as usize;
            let shape = (0..rank)
                .map(|_| r.u64("extent").map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(wrap(&field))?;
            let n: usize = shape.iter().product();
            let raw = r.take(n * 4, "values").map_err(wrap(&field))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            tensors.push(CheckpointTensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(("trailer".into(), "unexpected bytes after last tensor".into()));
        }
        Ok(Self { config, tensors })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&bytes).map_err(|(field, reason)| Error::parse(path, field, reason))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip() {
        let model = DualMae::new(MaeConfig::tiny(), 3).unwrap();
        let mut ck = Checkpoint::from_model(&model);
        let gs = GaussianSet::new(vec![0.5; 3], vec![1.0, 0.0, 0.0, 0.0], vec![-1.0; 3], vec![0.25; 3], vec![0.0])
            .unwrap();
        ck.add_gaussians(0, &gs);
        let back = Checkpoint::parse(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.gaussians().unwrap(), vec![(0, gs)]);
        let m = back.model().unwrap();
        assert_eq!(m.params.len(), model.params.len());
    }

    #[test]
    fn optimizer_state_round_trip() {
        let model = DualMae::new(MaeConfig::tiny(), 3).unwrap();
        let mut ck = Checkpoint::from_model(&model);
        assert!(ck.optimizer(&model.params, 1e-3, 0.0).unwrap().is_none());
        let first: Vec<Vec<f64>> = model.params.iter().map(|(_, t)| vec![0.25; t.numel()]).collect();
        let second: Vec<Vec<f64>> = model.params.iter().map(|(_, t)| vec![0.5; t.numel()]).collect();
        let opt = AdamW::with_state(1e-3, 0.05, 7, first.clone(), second.clone()).unwrap();
        ck.add_optimizer(&opt, &model.params);
        let back = Checkpoint::parse(&ck.to_bytes()).unwrap();
        let m = back.model().unwrap();
        let resumed = back.optimizer(&m.params, 1e-3, 0.05).unwrap().unwrap();
        assert_eq!(resumed.step_count(), 7);
        assert_eq!(resumed.moments().0, &first[..]);
        assert_eq!(resumed.moments().1, &second[..]);
    }

    #[test]
    fn bad_magic_names_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ckpt");
        fs::write(&p, b"NOTACKPT\x01\x00\x00\x00").unwrap();
        let msg = Checkpoint::read(&p).unwrap_err().to_string();
        assert!(msg.contains("magic"), "{msg}");
    }

    #[test]
    fn truncated_tensor_names_tensor() {
        let model = DualMae::new(MaeConfig::tiny(), 3).unwrap();
        let bytes = Checkpoint::from_model(&model).to_bytes();
        let err = Checkpoint::parse(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.0.contains("tensor"), "{err:?}");
    }
}
