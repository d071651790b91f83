use serde_json::{Map, Value};

use super::data::Dataset;
use super::derive_seed;
use super::report::metric_value;
use super::stage2::render_scores;
use crate::error::Result;
use crate::mae::{reconstruct_full_cloud, Checkpoint, Stage1Example};
use crate::pointcloud::chamfer;

#[derive(Clone, Debug, PartialEq)]
pub struct SceneMetrics {
    pub scene: usize,
    pub name: String,
    /// Mean PSNR of the stored Gaussians over the scene's views; `None`
    /// when the checkpoint has no Gaussians for this scene.
    pub psnr: Option<f64>,
    /// `chamfer(P_rec, input cloud)`; `None` without a network.
    pub chamfer: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub scenes: Vec<SceneMetrics>,
    pub mean_psnr: Option<f64>,
    pub mean_chamfer: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

impl EvalReport {
    pub fn to_json(&self) -> Value {
        let opt = |v: Option<f64>| v.map(metric_value).unwrap_or(Value::Null);
        let scenes = self
            .scenes
            .iter()
            .map(|s| {
                let mut m = Map::new();
                m.insert("scene".into(), s.scene.into());
                m.insert("name".into(), s.name.clone().into());
                m.insert("psnr".into(), opt(s.psnr));
                m.insert("chamfer".into(), opt(s.chamfer));
                Value::Object(m)
            })
            .collect();
        let mut m = Map::new();
        m.insert("mean_psnr".into(), opt(self.mean_psnr));
        m.insert("mean_chamfer".into(), opt(self.mean_chamfer));
        m.insert("scenes".into(), Value::Array(scenes));
        Value::Object(m)
    }
}

/// Scores a checkpoint on `data`: splatting PSNR for every scene that has
/// stored Gaussians and network reconstruction Chamfer on each scene's
/// first view, with fixed evaluation masks.
pub fn evaluate(ck: &Checkpoint, data: &Dataset) -> Result<EvalReport> {
    let model = if ck.has_network() { Some(ck.model()?) } else { None };
    let gaussians = ck.gaussians()?;
    if let Some(m) = &model {
        data.check_image_size(m.cfg.image_width, m.cfg.image_height)?;
    }
    let mut scenes = Vec::with_capacity(data.scenes.len());
    for (s, scene) in data.scenes.iter().enumerate() {
        let psnr = match gaussians.iter().find(|(i, _)| *i == s) {
            Some((_, gs)) => {
                let views: Vec<_> = scene.frames.iter().map(|f| (f.camera.clone(), f.image.clone())).collect();
                Some(render_scores(gs, &views, 0.0)?.1)
            }
            None => None,
        };
        let chamfer = match &model {
            Some(m) => {
                let f = &scene.frames[0];
                let ex = Stage1Example::new(&m.cfg, &scene.cloud, &f.image, &f.camera, derive_seed(0, "eval", s as u64))?;
                let (_, g, out) = m.evaluate(&ex)?;
                let recon = out.recon_points.map(|v| g.value(v).to_vec());
                let p_rec = reconstruct_full_cloud(&ex, recon.as_deref())?;
                Some(chamfer(&p_rec, &ex.cloud)?)
            }
            None => None,
        };
        scenes.push(SceneMetrics {
            scene: s,
            name: scene.name.clone(),
            psnr,
            chamfer,
        });
    }
    Ok(EvalReport {
        mean_psnr: mean(scenes.iter().filter_map(|s| s.psnr)),
        mean_chamfer: mean(scenes.iter().filter_map(|s| s.chamfer)),
        scenes,
    })
}
