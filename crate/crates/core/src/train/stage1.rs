use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::TrainConfig;
use super::data::{select_fraction, Dataset};
use super::report::{LossReport, MetricsSink};
use super::{derive_seed, epoch_index};
use crate::autodiff::{AdamW, Graph, Var};
use crate::error::{Error, Result};
use crate::mae::{Checkpoint, DualMae, Stage1Example, Stage1Losses};

/// A network plus its optimizer state.
pub struct Trainer {
    pub model: DualMae,
    pub opt: AdamW,
}

impl Trainer {
    pub fn new(model: DualMae, lr: f64, weight_decay: f64) -> Self {
        Self {
            model,
            opt: AdamW::new(lr, weight_decay),
        }
    }

    /// Network and, when stored, optimizer state from a checkpoint. The
    /// learning rate and weight decay always come from the arguments.
    pub fn from_checkpoint(ck: &Checkpoint, lr: f64, weight_decay: f64) -> Result<Self> {
        let model = ck.model()?;
        let opt = ck
            .optimizer(&model.params, lr, weight_decay)?
            .unwrap_or_else(|| AdamW::new(lr, weight_decay));
        Ok(Self { model, opt })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::from_model(&self.model);
        ck.add_optimizer(&self.opt, &self.model.params);
        ck
    }

    /// One AdamW step on the mean stage-1 loss of `batch`. Returns the batch
    /// means evaluated before the update; on a non-finite loss the
    /// parameters are left untouched and `Ok(None)` is returned.
    pub fn step(&mut self, batch: &[&Stage1Example]) -> Result<Option<Stage1Losses>> {
        if batch.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let scale = 1.0 / batch.len() as f64;
        let model = &self.model;
        let parts = batch
            .par_iter()
            .map(|ex| {
                let mut g = Graph::new();
                let p = g.bind(&model.params);
                let out = model.forward(&mut g, &p, ex)?;
                let losses = out.losses(&g);
                if losses.total.is_finite() {
                    let root = g.scale(out.loss, scale);
                    g.backward(root)?;
                }
                Ok((g, p, losses))
            })
            .collect::<Result<Vec<_>>>()?;
        let mean = |f: fn(&Stage1Losses) -> f64| parts.iter().map(|(_, _, l)| f(l)).sum::<f64>() * scale;
        let (point, image, cross) = (mean(|l| l.point), mean(|l| l.image), mean(|l| l.cross));
        let losses = Stage1Losses {
            point,
            image,
            cross,
            total: point + image + cross,
        };
        if parts.iter().any(|(_, _, l)| !l.total.is_finite()) {
            return Ok(None);
        }
        let graphs: Vec<(Graph, Vec<Var>)> = parts.into_iter().map(|(g, p, _)| (g, p)).collect();
        self.apply(&graphs)?;
        Ok(Some(losses))
    }

    /// Accumulates the gradients of every graph in order and takes one
    /// optimizer step. Parameters no graph reached get a zero gradient.
    pub fn apply(&mut self, graphs: &[(Graph, Vec<Var>)]) -> Result<()> {
        let store = &mut self.model.params;
        store.zero_grad();
        for (g, vars) in graphs {
            g.accumulate_grads(store, vars)?;
        }
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let t = store.get_mut(id);
            if t.grad().is_none() {
                let zeros = vec![0.0; t.numel()];
                t.accumulate_grad(&zeros)?;
            }
        }
        self.opt.step(store, true)
    }
}

/// Writes the network and optimizer state to `<out>/<name>` when an output
/// directory is set.
pub(crate) fn save(trainer: &Trainer, out: Option<&Path>, name: &str) -> Result<Option<PathBuf>> {
    match out {
        Some(dir) => {
            let path = dir.join(name);
            trainer.checkpoint().write(&path)?;
            Ok(Some(path))
        }
        None => Ok(None),
    }
}

pub(crate) fn diverged(trainer: &Trainer, out: Option<&Path>, step: usize) -> Error {
    let checkpoint = match save(trainer, out, "last_good.ckpt") {
        Ok(Some(p)) => p.display().to_string(),
        Ok(None) => "not written (no output directory)".into(),
        Err(e) => format!("failed to write: {e}"),
    };
    Error::TrainingDiverged { step, checkpoint }
}

pub struct Stage1Run {
    pub trainer: Trainer,
    pub reports: Vec<LossReport>,
    /// Final checkpoint path, when an output directory was given.
    pub checkpoint: Option<PathBuf>,
}

/// Builds one masked example per selected `(scene, view)` pair.
pub(crate) fn prepare_examples(
    data: &Dataset,
    cfg: &TrainConfig,
    pairs: &[(usize, usize)],
    key: &str,
) -> Result<Vec<Stage1Example>> {
    pairs
        .par_iter()
        .enumerate()
        .map(|(i, &(s, v))| {
            let scene = &data.scenes[s];
            let f = &scene.frames[v];
            Stage1Example::new(&cfg.mae, &scene.cloud, &f.image, &f.camera, derive_seed(cfg.seed, key, epoch_index(0, i)))
        })
        .collect()
}

/// Masked-reconstruction pre-training. Masks are redrawn every epoch and
/// the example order is reshuffled; both depend only on `cfg.seed`.
///
/// With an output directory, writes `metrics.jsonl`, `epoch_NNNN.ckpt`
/// every `checkpoint_every` epochs and `stage1.ckpt` at the end.
pub fn train_stage1(data: &Dataset, cfg: &TrainConfig, out: Option<&Path>) -> Result<Stage1Run> {
    cfg.validate()?;
    data.check_image_size(cfg.mae.image_width, cfg.mae.image_height)?;
    let all = data.examples();
    let pairs: Vec<(usize, usize)> = select_fraction(all.len(), cfg.fraction, cfg.seed)?
        .into_iter()
        .map(|i| all[i])
        .collect();
    let mut examples = prepare_examples(data, cfg, &pairs, "mask")?;
    let model = DualMae::new(cfg.mae.clone(), derive_seed(cfg.seed, "model", 0))?;
    let mut trainer = Trainer::new(model, cfg.lr, cfg.weight_decay);
    let mut sink = match out {
        Some(dir) => MetricsSink::create(&dir.join("metrics.jsonl"))?,
        None => MetricsSink::discard(),
    };
    let mut reports = Vec::new();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        if epoch > 0 {
            for (i, ex) in examples.iter_mut().enumerate() {
                ex.remask(cfg.mae.mask_ratio, derive_seed(cfg.seed, "mask", epoch_index(epoch, i)))?;
            }
        }
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, "order", epoch as u64)));
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Stage1Example> = chunk.iter().map(|&i| &examples[i]).collect();
            let l = match trainer.step(&batch)? {
                Some(l) => l,
                None => return Err(diverged(&trainer, out, step)),
            };
            let mut r = LossReport::stage1(step, epoch, l.point, l.image, l.cross);
            if let [i] = chunk {
                r.scene = Some(pairs[*i].0);
            }
            sink.write(&r)?;
            reports.push(r);
            step += 1;
        }
        if cfg.checkpoint_every > 0 && (epoch + 1) % cfg.checkpoint_every == 0 && epoch + 1 < cfg.epochs {
            save(&trainer, out, &format!("epoch_{:04}.ckpt", epoch + 1))?;
        }
    }
    let checkpoint = save(&trainer, out, "stage1.ckpt")?;
    Ok(Stage1Run {
        trainer,
        reports,
        checkpoint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mae::MaeConfig;

    fn tiny_cfg() -> TrainConfig {
        let mut cfg = TrainConfig {
            mae: MaeConfig::tiny(),
            epochs: 2,
            checkpoint_every: 1,
            ..TrainConfig::default()
        };
        cfg.synthetic.scenes = 1;
        cfg.synthetic.views_per_scene = 2;
        cfg.synthetic.points_per_scene = 1024;
        cfg.synthetic.focal = 24.0;
        cfg
    }

    #[test]
    fn zero_lr_keeps_losses_constant() {
        let mut cfg = tiny_cfg();
        cfg.lr = 0.0;
        cfg.synthetic.views_per_scene = 1;
        cfg.epochs = 3;
        let data = Dataset::synthetic(&cfg).unwrap();
        let pairs = data.examples();
        let ex = prepare_examples(&data, &cfg, &pairs, "mask").unwrap();
        let model = DualMae::new(cfg.mae.clone(), 1).unwrap();
        let mut t = Trainer::new(model, 0.0, cfg.weight_decay);
        let first = t.step(&[&ex[0]]).unwrap().unwrap();
        for _ in 0..3 {
            let l = t.step(&[&ex[0]]).unwrap().unwrap();
            assert!((l.total - first.total).abs() <= 1e-12);
        }
    }

    #[test]
    fn writes_metrics_and_checkpoints() {
        let cfg = tiny_cfg();
        let data = Dataset::synthetic(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let run = train_stage1(&data, &cfg, Some(dir.path())).unwrap();
        assert_eq!(run.reports.len(), 4);
        for r in &run.reports {
            assert!(r.identity_error(cfg.alpha, cfg.beta) <= 1e-12);
        }
        let text = std::fs::read_to_string(dir.path().join("metrics.jsonl")).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(dir.path().join("epoch_0001.ckpt").exists());
        let back = Checkpoint::read(dir.path().join("stage1.ckpt")).unwrap().model().unwrap();
        assert_eq!(back.cfg, cfg.mae);
    }

    #[test]
    fn batches_average_examples() {
        let mut cfg = tiny_cfg();
        cfg.batch_size = 2;
        cfg.epochs = 1;
        let data = Dataset::synthetic(&cfg).unwrap();
        let run = train_stage1(&data, &cfg, None).unwrap();
        assert_eq!(run.reports.len(), 1);
        assert_eq!(run.reports[0].scene, None);
    }
}
