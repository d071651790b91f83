//! Fits a two-layer MLP to y = sin(3x) with the tape and AdamW, then checks
//! one gradient against a central difference.
//!
//! cargo run --release --example autodiff_regression

use splatmae::autodiff::{AdamW, Graph, ParamStore, Tensor};

fn loss(g: &mut Graph, store: &ParamStore, xs: &[f64], ys: &[f64]) -> splatmae::Result<(splatmae::autodiff::Var, Vec<splatmae::autodiff::Var>)> {
    let p = g.bind(store);
    let x = g.constant(&[xs.len(), 1], xs.to_vec())?;
    let y = g.constant(&[ys.len(), 1], ys.to_vec())?;
    let h = g.matmul(x, p[0])?;
    let h = g.add(h, p[1])?;
    let h = g.tanh(h);
    let out = g.matmul(h, p[2])?;
    let diff = g.sub(out, y)?;
    let sq = g.square(diff);
    Ok((g.mean(sq), p))
}

fn main() -> splatmae::Result<()> {
    let hidden = 16;
    let mut store = ParamStore::new();
    let w1: Vec<f64> = (0..hidden).map(|i| ((i as f64) * 0.37).sin()).collect();
    let b1: Vec<f64> = (0..hidden).map(|i| ((i as f64) * 0.91).cos() * 0.5).collect();
    let w2: Vec<f64> = (0..hidden).map(|i| ((i as f64) * 1.3).sin() * 0.3).collect();
    store.add("w1", Tensor::new(&[1, hidden], w1)?.with_grad());
    store.add("b1", Tensor::new(&[1, hidden], b1)?.with_grad());
    store.add("w2", Tensor::new(&[hidden, 1], w2)?.with_grad());

    let xs: Vec<f64> = (0..64).map(|i| -1.0 + 2.0 * i as f64 / 63.0).collect();
    let ys: Vec<f64> = xs.iter().map(|x| (3.0 * x).sin()).collect();

    let mut opt = AdamW::new(1e-2, 0.0);
    for step in 0..=1000 {
        let mut g = Graph::new();
        let (l, p) = loss(&mut g, &store, &xs, &ys)?;
        if step % 200 == 0 {
            println!("step {step:4}: mse {:.6}", g.item(l));
        }
        g.backward(l)?;
        g.accumulate_grads(&mut store, &p)?;
        opt.step(&mut store, true)?;
    }

    let mut g = Graph::new();
    let (l, p) = loss(&mut g, &store, &xs, &ys)?;
    g.backward(l)?;
    let analytic = g.grad(p[0]).map(|d| d[0]).unwrap_or(0.0);
    let h = 1e-5;
    let mut eval = |delta: f64| -> splatmae::Result<f64> {
        let id = store.find("w1").expect("w1 registered");
        store.get_mut(id).data_mut()[0] += delta;
        let mut g = Graph::new();
        let (l, _) = loss(&mut g, &store, &xs, &ys)?;
        store.get_mut(id).data_mut()[0] -= delta;
        Ok(g.item(l))
    };
    let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
    println!("d mse / d w1[0]: analytic {analytic:.8e}, central difference {numeric:.8e}");
    Ok(())
}
