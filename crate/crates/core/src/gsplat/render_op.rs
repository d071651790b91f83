use super::raster::{rasterize, RenderSettings, Rendered};
use super::GaussianSet;
use crate::autodiff::{CustomOp, Graph, Var};
use crate::camera::CameraModel;
use crate::error::Result;

/// Graph handles for the five parameter groups of a [`GaussianSet`].
#[derive(Clone, Copy, Debug)]
pub struct GaussianVars {
    pub mu: Var,
    pub quat: Var,
    pub log_scale: Var,
    pub color_logit: Var,
    pub opacity_logit: Var,
}

impl GaussianVars {
    /// Binds vars in [`super::PARAM_NAMES`] order.
    pub fn from_slice(v: &[Var]) -> Self {
        Self {
            mu: v[0],
            quat: v[1],
            log_scale: v[2],
            color_logit: v[3],
            opacity_logit: v[4],
        }
    }

    pub fn as_array(&self) -> [Var; 5] {
        [self.mu, self.quat, self.log_scale, self.color_logit, self.opacity_logit]
    }

    pub fn current(&self, g: &Graph) -> Result<GaussianSet> {
        GaussianSet::new(
            g.value(self.mu).to_vec(),
            g.value(self.quat).to_vec(),
            g.value(self.log_scale).to_vec(),
            g.value(self.color_logit).to_vec(),
            g.value(self.opacity_logit).to_vec(),
        )
    }
}

struct RenderOp {
    gs: GaussianSet,
    cam: CameraModel,
    rendered: Rendered,
}

impl CustomOp for RenderOp {
    fn name(&self) -> &'static str {
        "rasterize"
    }

    fn backward(&self, _inputs: &[&[f64]], _out: &[f64], g: &[f64]) -> Vec<Option<Vec<f64>>> {
        match self.rendered.backward(&self.gs, &self.cam, g) {
            Ok(d) => vec![
                Some(d.mu),
                Some(d.quat),
                Some(d.log_scale),
                Some(d.color_logit),
                Some(d.opacity_logit),
            ],
            Err(_) => vec![None; 5],
        }
    }
}

/// Renders the Gaussians held in `vars` as an `[H, W, 3]` graph node.
pub fn render_var(g: &mut Graph, vars: &GaussianVars, cam: &CameraModel, settings: &RenderSettings) -> Result<Var> {
    let gs = vars.current(g)?;
    let rendered = rasterize(&gs, cam, settings)?;
    let value = rendered.image.data.clone();
    g.custom(
        &vars.as_array(),
        vec![cam.height, cam.width, 3],
        value,
        Box::new(RenderOp {
            gs,
            cam: cam.clone(),
            rendered,
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::numeric::{central_difference, relative_error};
    use crate::gsplat::gs_photometric_loss_var;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(rng: &mut ChaCha8Rng, n: usize) -> GaussianSet {
        let mut mu = Vec::new();
        for _ in 0..n {
            mu.extend([rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), rng.gen_range(1.5..3.0)]);
        }
        GaussianSet::new(
            mu,
            (0..n * 4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            (0..n * 3).map(|_| rng.gen_range(-2.6..-1.6)).collect(),
            (0..n * 3).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn photometric_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cam = CameraModel::identity(20.0, 20.0, 7.5, 7.5, 16, 16).unwrap();
        let settings = RenderSettings::exact();
        let gs = random_set(&mut rng, 8);
        let target: Vec<f64> = (0..16 * 16 * 3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let loss = |gs: &GaussianSet, grad: bool| {
            let store = gs.to_params([1.0; 5]);
            let mut g = Graph::new();
            let vars = g.bind(&store);
            let gv = GaussianVars::from_slice(&vars);
            let r = render_var(&mut g, &gv, &cam, &settings).unwrap();
            let t = g.constant(&[16, 16, 3], target.clone()).unwrap();
            let l = gs_photometric_loss_var(&mut g, r, t, gv.log_scale, 0.2, 0.5).unwrap();
            let value = g.item(l);
            let mut grads = Vec::new();
            if grad {
                g.backward(l).unwrap();
                for v in vars {
                    grads.extend_from_slice(g.grad(v).unwrap());
                }
            }
            (value, grads)
        };
        let (_, analytic) = loss(&gs, true);
        let flat: Vec<f64> = [&gs.mu, &gs.quat, &gs.log_scale, &gs.color_logit, &gs.opacity_logit]
            .into_iter()
            .flatten()
            .copied()
            .collect();
        let n = gs.len();
        let numeric = central_difference(&flat, 1e-5, |x| {
            let (a, rest) = x.split_at(n * 3);
            let (b, rest) = rest.split_at(n * 4);
            let (c, rest) = rest.split_at(n * 3);
            let (d, e) = rest.split_at(n * 3);
            let gs = GaussianSet::new(a.to_vec(), b.to_vec(), c.to_vec(), d.to_vec(), e.to_vec()).unwrap();
            loss(&gs, false).0
        });
        let err = relative_error(&analytic, &numeric);
        assert!(err < 1e-3, "relative error {err}");
    }
}
