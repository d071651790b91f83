//! Finite-difference checks of every analytic gradient in the crate.
//!
//! Each check draws random small instances, reduces the output to a scalar
//! with fixed random weights and compares the reverse-mode gradient against
//! central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::numeric::{central_difference, relative_error};
use crate::autodiff::{Graph, Tensor, Var};
use crate::camera::CameraModel;
use crate::error::{Error, Result};
use crate::gsplat::{gs_image_loss_var, gs_photometric_loss_var, render_var, GaussianVars, RenderSettings};
use crate::pointcloud::chamfer_var;

pub const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-3;
pub const MODULES: [&str; 4] = ["autodiff", "chamfer", "raster", "losses"];

/// Worst relative error of one check over its instances.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub module: &'static str,
    pub name: String,
    pub instances: usize,
    pub max_rel_error: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error < TOLERANCE
    }
}

type Input = (Vec<usize>, Vec<f64>);
type Build = dyn Fn(&mut Graph, &[Var]) -> Result<Var>;

/// Relative error between the analytic and numeric gradients of
/// `sum(build(inputs) * w)` for fixed random weights `w`.
pub fn check_fn(inputs: &[Input], weight_seed: u64, build: &Build) -> Result<f64> {
    let eval = |flat: &[f64], grad: bool| -> Result<(f64, Vec<f64>)> {
        let mut g = Graph::new();
        let mut vars = Vec::with_capacity(inputs.len());
        let mut off = 0;
        for (shape, data) in inputs {
            let t = Tensor::new(shape, flat[off..off + data.len()].to_vec())?.with_grad();
            off += data.len();
            vars.push(g.leaf(&t));
        }
        let out = build(&mut g, &vars)?;
        let mut rng = ChaCha8Rng::seed_from_u64(weight_seed);
        let n = g.value(out).len();
        let w: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let shape = g.shape(out).to_vec();
        let w = g.constant(&shape, w)?;
        let prod = g.mul(out, w)?;
        let loss = g.sum(prod);
        let value = g.item(loss);
        let mut grads = Vec::new();
        if grad {
            g.backward(loss)?;
            for (v, (_, data)) in vars.iter().zip(inputs) {
                match g.grad(*v) {
                    Some(d) => grads.extend_from_slice(d),
                    None => grads.extend(std::iter::repeat(0.0).take(data.len())),
                }
            }
        }
        Ok((value, grads))
    };
    let flat: Vec<f64> = inputs.iter().flat_map(|(_, d)| d.iter().copied()).collect();
    let (_, analytic) = eval(&flat, true)?;
    let mut failure = None;
    let numeric = central_difference(&flat, STEP, |x| match eval(x, false) {
        Ok((v, _)) => v,
        Err(e) => {
            failure.get_or_insert(e);
            f64::NAN
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let err = relative_error(&analytic, &numeric);
    Ok(if err.is_nan() { f64::INFINITY } else { err })
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

/// Values bounded away from zero, with random signs.
fn away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v = rng.gen_range(0.1..2.0);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

struct Case {
    name: &'static str,
    make: fn(&mut ChaCha8Rng) -> Vec<Input>,
    build: Box<Build>,
}

fn case(name: &'static str, make: fn(&mut ChaCha8Rng) -> Vec<Input>, build: impl Fn(&mut Graph, &[Var]) -> Result<Var> + 'static) -> Case {
    Case {
        name,
        make,
        build: Box::new(build),
    }
}

fn mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Input {
    (vec![r, c], uniform(rng, r * c, -2.0, 2.0))
}

fn autodiff_cases() -> Vec<Case> {
    use crate::autodiff::Unary::*;
    let mut cases = Vec::new();
    let signed = |rng: &mut ChaCha8Rng| vec![mat(rng, 3, 4)];
    let positive = |rng: &mut ChaCha8Rng| vec![(vec![3, 4], uniform(rng, 12, 0.2, 2.0))];
    let kinked = |rng: &mut ChaCha8Rng| vec![(vec![3, 4], away_from_zero(rng, 12))];
    for (name, kind) in [("neg", Neg), ("exp", Exp), ("sigmoid", Sigmoid), ("tanh", Tanh), ("gelu", Gelu), ("square", Square)] {
        cases.push(case(name, signed, move |g, v| Ok(g.unary(v[0], kind))));
    }
    for (name, kind) in [("log", Log), ("sqrt", Sqrt)] {
        cases.push(case(name, positive, move |g, v| Ok(g.unary(v[0], kind))));
    }
    for (name, kind) in [("relu", Relu), ("abs", Abs)] {
        cases.push(case(name, kinked, move |g, v| Ok(g.unary(v[0], kind))));
    }
    let pair = |rng: &mut ChaCha8Rng| {
        let b = match rng.gen_range(0..3) {
            0 => (vec![3, 4], uniform(rng, 12, -2.0, 2.0)),
            1 => (vec![4], uniform(rng, 4, -2.0, 2.0)),
            _ => (vec![3, 1], uniform(rng, 3, -2.0, 2.0)),
        };
        vec![mat(rng, 3, 4), b]
    };
    let divisor = |rng: &mut ChaCha8Rng| {
        let b = match rng.gen_range(0..3) {
            0 => (vec![3, 4], away_from_zero(rng, 12)),
            1 => (vec![4], away_from_zero(rng, 4)),
            _ => (vec![3, 1], away_from_zero(rng, 3)),
        };
        vec![mat(rng, 3, 4), b]
    };
    cases.push(case("add", pair, |g, v| g.add(v[0], v[1])));
    cases.push(case("sub", pair, |g, v| g.sub(v[0], v[1])));
    cases.push(case("mul", pair, |g, v| g.mul(v[0], v[1])));
    cases.push(case("div", divisor, |g, v| g.div(v[0], v[1])));
    cases.push(case("scale", signed, |g, v| Ok(g.scale(v[0], -1.7))));
    cases.push(case("add_scalar", signed, |g, v| Ok(g.add_scalar(v[0], 0.3))));
    cases.push(case("matmul", |rng| vec![mat(rng, 3, 4), mat(rng, 4, 2)], |g, v| g.matmul(v[0], v[1])));
    cases.push(case("transpose", signed, |g, v| g.transpose(v[0])));
    cases.push(case("reshape", signed, |g, v| g.reshape(v[0], &[2, 6])));
    cases.push(case("softmax", |rng| vec![mat(rng, 3, 5)], |g, v| g.softmax(v[0])));
    cases.push(case("layer_norm", |rng| vec![mat(rng, 3, 5)], |g, v| g.layer_norm(v[0])));
    cases.push(case("sum", signed, |g, v| Ok(g.sum(v[0]))));
    cases.push(case("mean", signed, |g, v| Ok(g.mean(v[0]))));
    cases.push(case("sum_axis", signed, |g, v| g.sum_axis(v[0], 0)));
    cases.push(case("mean_axis", signed, |g, v| g.mean_axis(v[0], 1)));
    cases.push(case("max_axis", signed, |g, v| g.max_axis(v[0], 1)));
    cases.push(case("min_axis", signed, |g, v| g.min_axis(v[0], 0)));
    cases.push(case("concat", |rng| vec![mat(rng, 3, 4), mat(rng, 2, 4)], |g, v| g.concat(&[v[0], v[1]], 0)));
    cases.push(case("slice", signed, |g, v| g.slice(v[0], 1, 1, 2)));
    cases.push(case("gather_rows", |rng| vec![mat(rng, 4, 3)], |g, v| g.gather_rows(v[0], &[2, 0, 2, 3])));
    cases.push(case("scatter_rows", |rng| vec![mat(rng, 4, 3), mat(rng, 2, 3)], |g, v| {
        g.scatter_rows(v[0], &[3, 1], v[1])
    }));
    cases
}

fn chamfer_cases() -> Vec<Case> {
    vec![case(
        "chamfer",
        |rng| {
            let (n, m) = (rng.gen_range(2..12), rng.gen_range(2..12));
            vec![(vec![n, 3], uniform(rng, n * 3, -1.0, 1.0)), (vec![m, 3], uniform(rng, m * 3, -1.0, 1.0))]
        },
        |g, v| chamfer_var(g, v[0], v[1]),
    )]
}

const RASTER_PX: usize = 12;

fn gaussian_inputs(rng: &mut ChaCha8Rng) -> Vec<Input> {
    let n = rng.gen_range(1..7);
    let mut mu = Vec::with_capacity(n * 3);
    for _ in 0..n {
        mu.extend([rng.gen_range(-0.4..0.4), rng.gen_range(-0.4..0.4), rng.gen_range(1.5..3.0)]);
    }
    vec![
        (vec![n, 3], mu),
        (vec![n, 4], uniform(rng, n * 4, -1.0, 1.0)),
        (vec![n, 3], uniform(rng, n * 3, -2.6, -1.6)),
        (vec![n, 3], uniform(rng, n * 3, -2.0, 2.0)),
        (vec![n], uniform(rng, n, -2.0, 2.0)),
    ]
}

fn render(g: &mut Graph, v: &[Var]) -> Result<Var> {
    let c = (RASTER_PX as f64 - 1.0) / 2.0;
    let cam = CameraModel::identity(16.0, 16.0, c, c, RASTER_PX, RASTER_PX)?;
    render_var(g, &GaussianVars::from_slice(v), &cam, &RenderSettings::exact())
}

fn raster_cases() -> Vec<Case> {
    vec![case("render", gaussian_inputs, render)]
}

fn image_input(rng: &mut ChaCha8Rng) -> Input {
    (vec![8, 8, 3], uniform(rng, 8 * 8 * 3, 0.0, 1.0))
}

fn loss_cases() -> Vec<Case> {
    vec![
        case(
            "gs_photometric_loss",
            |rng| {
                let n = rng.gen_range(1..6);
                vec![image_input(rng), image_input(rng), (vec![n, 3], uniform(rng, n * 3, -2.0, 0.0))]
            },
            |g, v| gs_photometric_loss_var(g, v[0], v[1], v[2], 0.2, 0.5),
        ),
        case(
            "gs_image_loss",
            |rng| vec![image_input(rng), image_input(rng)],
            |g, v| gs_image_loss_var(g, v[0], v[1], 0.2),
        ),
        case("gs_photometric_loss_through_render", gaussian_inputs, |g, v| {
            let r = render(g, v)?;
            let n = RASTER_PX * RASTER_PX * 3;
            let target = (0..n).map(|i| 0.5 + 0.4 * (i as f64 * 0.7).sin()).collect();
            let target = g.constant(&[RASTER_PX, RASTER_PX, 3], target)?;
            gs_photometric_loss_var(g, r, target, v[2], 0.2, 0.5)
        }),
    ]
}

fn cases(module: &str) -> Result<Vec<Case>> {
    match module {
        "autodiff" => Ok(autodiff_cases()),
        "chamfer" => Ok(chamfer_cases()),
        "raster" => Ok(raster_cases()),
        "losses" => Ok(loss_cases()),
        other => Err(Error::invalid(format!("unknown gradcheck module `{other}`; expected one of {MODULES:?}"))),
    }
}

/// Runs every check of `module` on `instances` random instances.
pub fn run_module(module: &str, instances: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let module: &'static str = MODULES
        .iter()
        .find(|m| **m == module)
        .ok_or_else(|| Error::invalid(format!("unknown gradcheck module `{module}`; expected one of {MODULES:?}")))?;
    cases(module)?
        .into_iter()
        .enumerate()
        .map(|(ci, c)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((ci as u64 + 1) << 32));
            let mut worst = 0.0f64;
            for k in 0..instances {
                let inputs = (c.make)(&mut rng);
                let err = check_fn(&inputs, seed.wrapping_add(k as u64), &c.build)?;
                worst = worst.max(err);
            }
            Ok(CheckResult {
                module,
                name: c.name.to_string(),
                instances,
                max_rel_error: worst,
            })
        })
        .collect()
}

/// Runs all modules, or only `only` when given.
pub fn run_all(only: Option<&str>, instances: usize, seed: u64) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for m in MODULES {
        if only.is_none_or(|o| o == m) {
            out.extend(run_module(m, instances, seed)?);
        }
    }
    if out.is_empty() {
        return Err(Error::invalid(format!(
            "unknown gradcheck module `{}`; expected one of {MODULES:?}",
            only.unwrap_or_default()
        )));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_module_passes_on_a_few_instances() {
        for r in run_all(None, 3, 1).unwrap() {
            assert!(r.passed(), "{} {}: {}", r.module, r.name, r.max_rel_error);
        }
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // The detached branch contributes to the value but not the gradient.
        let inputs = vec![(vec![3], vec![0.5, -1.0, 2.0])];
        let err = check_fn(&inputs, 0, &|g: &mut Graph, v: &[Var]| {
            let d = g.detach(v[0]);
            g.mul(v[0], d)
        })
        .unwrap();
        assert!(err > 0.1);
    }

    #[test]
    fn unknown_module_errors() {
        assert!(run_all(Some("nope"), 1, 0).is_err());
    }
}
