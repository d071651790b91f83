use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde_json::{Map, Number, Value};

use crate::error::{Error, Result};

/// Scalars logged for one optimizer step.
///
/// Stage-1 steps leave the splatting fields empty.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    pub step: usize,
    pub epoch: usize,
    pub stage: u8,
    pub scene: Option<usize>,
    pub l_point_rec: f64,
    pub l_image_rec: f64,
    pub l_cross_rec: f64,
    pub l_stage1: f64,
    pub l_gs_image: Option<f64>,
    pub l_gs_point: Option<f64>,
    pub l_gs_branch: Option<f64>,
    pub l_stage2: Option<f64>,
    pub psnr: Option<f64>,
    /// Free-form note, e.g. why a scene was skipped.
    pub note: Option<String>,
}

/// Finite values become JSON numbers; infinities and NaN become the strings
/// `"inf"`, `"-inf"` and `"nan"`.
pub fn metric_value(v: f64) -> Value {
    match Number::from_f64(v) {
        Some(n) => Value::Number(n),
        None if v.is_nan() => Value::String("nan".into()),
        None if v > 0.0 => Value::String("inf".into()),
        None => Value::String("-inf".into()),
    }
}

impl LossReport {
    /// Fills the stage-1 fields; the total is the sum of the three terms.
    pub fn stage1(step: usize, epoch: usize, point: f64, image: f64, cross: f64) -> Self {
        Self {
            step,
            epoch,
            stage: 1,
            l_point_rec: point,
            l_image_rec: image,
            l_cross_rec: cross,
            l_stage1: point + image + cross,
            ..Self::default()
        }
    }

    /// Adds the splatting branch and the stage-2 total.
    pub fn with_branch(mut self, alpha: f64, beta: f64, gs_image: f64, gs_point: f64) -> Self {
        let branch = alpha * gs_image + beta * gs_point;
        self.stage = 2;
        self.l_gs_image = Some(gs_image);
        self.l_gs_point = Some(gs_point);
        self.l_gs_branch = Some(branch);
        self.l_stage2 = Some(self.l_stage1 + branch);
        self
    }

    /// Largest violation of the three loss-sum identities (0 when exact).
    pub fn identity_error(&self, alpha: f64, beta: f64) -> f64 {
        let mut err = (self.l_stage1 - (self.l_point_rec + self.l_image_rec + self.l_cross_rec)).abs();
        if let (Some(img), Some(pt), Some(branch)) = (self.l_gs_image, self.l_gs_point, self.l_gs_branch) {
            err = err.max((branch - (alpha * img + beta * pt)).abs());
            if let Some(total) = self.l_stage2 {
                err = err.max((total - (self.l_stage1 + branch)).abs());
            }
        }
        if err.is_nan() {
            f64::INFINITY
        } else {
            err
        }
    }

    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("step".into(), self.step.into());
        m.insert("epoch".into(), self.epoch.into());
        m.insert("stage".into(), self.stage.into());
        if let Some(s) = self.scene {
            m.insert("scene".into(), s.into());
        }
        let scalars = [
            ("l_point_rec", Some(self.l_point_rec)),
            ("l_image_rec", Some(self.l_image_rec)),
            ("l_cross_rec", Some(self.l_cross_rec)),
            ("l_stage1", Some(self.l_stage1)),
            ("l_gs_image", self.l_gs_image),
            ("l_gs_point", self.l_gs_point),
            ("l_gs_branch", self.l_gs_branch),
            ("l_stage2", self.l_stage2),
            ("psnr", self.psnr),
        ];
        for (name, v) in scalars {
            if let Some(v) = v {
                m.insert(name.into(), metric_value(v));
            }
        }
        if let Some(note) = &self.note {
            m.insert("note".into(), note.clone().into());
        }
        Value::Object(m)
    }

    pub fn to_json_line(&self) -> String {
        self.to_json().to_string()
    }
}

/// JSON-lines writer; a no-op when constructed without a path.
pub struct MetricsSink {
    out: Option<(BufWriter<File>, std::path::PathBuf)>,
}

impl MetricsSink {
    pub fn discard() -> Self {
        Self { out: None }
    }

    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            out: Some((BufWriter::new(f), path.to_path_buf())),
        })
    }

    pub fn write(&mut self, report: &LossReport) -> Result<()> {
        if let Some((w, path)) = &mut self.out {
            writeln!(w, "{}", report.to_json_line())
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(path.clone(), e))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identities_hold_by_construction() {
        let r = LossReport::stage1(0, 0, 0.1, 0.7, 0.3).with_branch(0.5, 2.0, 0.33, 1e-3);
        assert_eq!(r.identity_error(0.5, 2.0), 0.0);
        assert!(r.identity_error(1.0, 2.0) > 0.1);
    }

    #[test]
    fn zero_branch_weights_reduce_to_stage1() {
        let r = LossReport::stage1(0, 0, 0.2, 0.4, 0.8).with_branch(0.0, 0.0, 5.0, 7.0);
        assert_eq!(r.l_stage2, Some(r.l_stage1));
    }

    #[test]
    fn infinite_psnr_is_a_string() {
        let mut r = LossReport::stage1(3, 1, 0.0, 0.0, 0.0);
        r.psnr = Some(f64::INFINITY);
        let line = r.to_json_line();
        assert!(line.contains("\"psnr\":\"inf\""), "{line}");
        assert!(!line.contains("l_gs_point"));
    }

    #[test]
    fn nan_violation_is_infinite() {
        let r = LossReport::stage1(0, 0, f64::NAN, 0.0, 0.0);
        assert_eq!(r.identity_error(1.0, 1.0), f64::INFINITY);
    }
}
