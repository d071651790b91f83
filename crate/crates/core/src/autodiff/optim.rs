use super::tensor::ParamStore;
use crate::error::{Error, Result};

/// Adam with decoupled weight decay.
///
/// Per parameter: `p -= lr*wd*p`, then the bias-corrected Adam step. Each
/// parameter's learning rate is further scaled by its store `lr_scale`.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            betas: (0.9, 0.999),
            eps: 1e-8,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.first, &self.second)
    }

    /// Resumes from saved moments (one vector per parameter, in id order).
    pub fn with_state(lr: f64, weight_decay: f64, step: u64, first: Vec<Vec<f64>>, second: Vec<Vec<f64>>) -> Result<Self> {
        if first.len() != second.len() || first.iter().zip(&second).any(|(m, v)| m.len() != v.len()) {
            return Err(Error::invalid("first and second moments differ in shape"));
        }
        Ok(Self {
            step,
            first,
            second,
            ..Self::new(lr, weight_decay)
        })
    }

    /// Applies one update to every parameter in `store`.
    ///
    /// Fails without touching any parameter if a gradient is missing.
    pub fn step(&mut self, store: &mut ParamStore, zero_grad: bool) -> Result<()> {
        for id in store.ids() {
            if store.get(id).grad().is_none() {
                return Err(Error::MissingGrad(store.name(id).to_string()));
            }
        }
        if self.first.is_empty() {
            self.first = store.ids().map(|id| vec![0.0; store.get(id).numel()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != store.len() {
            return Err(Error::invalid("optimizer state does not match parameter store"));
        }
        self.step += 1;
        let (b1, b2) = self.betas;
        let bc1 = 1.0 - b1.powi(self.step as i32);
        let bc2 = 1.0 - b2.powi(self.step as i32);
        for id in store.ids() {
            let lr = self.lr * store.lr_scale(id);
            let t = store.get_mut(id);
            let g = t.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.first[id.0], &mut self.second[id.0]);
            if m.len() != g.len() {
                return Err(Error::invalid("optimizer moment shape mismatch"));
            }
            for (j, p) in t.data_mut().iter_mut().enumerate() {
                *p -= lr * self.weight_decay * *p;
                m[j] = b1 * m[j] + (1.0 - b1) * g[j];
                v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                *p -= lr * mhat / (vhat.sqrt() + self.eps);
            }
            if zero_grad {
                t.zero_grad();
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn store(p: f64, g: f64) -> ParamStore {
        let mut s = ParamStore::new();
        let id = s.add("p", Tensor::scalar(p));
        s.get_mut(id).accumulate_grad(&[g]).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m_hat = g, v_hat = g^2 on step 1, so the move is lr * g/(|g| + eps).
        let mut s = store(1.0, 1.0);
        let mut opt = AdamW::new(0.1, 0.0);
        opt.step(&mut s, false).unwrap();
        let expected = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((s.get(crate::autodiff::ParamId(0)).item() - expected).abs() < 1e-15);
        assert_eq!(opt.step_count(), 1);
    }

    #[test]
    fn decay_alone_shrinks_by_one_minus_lr_wd() {
        let mut s = store(1.0, 0.0);
        let mut opt = AdamW::new(0.1, 0.05);
        opt.step(&mut s, true).unwrap();
        let p = s.get(crate::autodiff::ParamId(0));
        assert!((p.item() - 0.995).abs() < 1e-15);
        assert!(p.grad().is_none());
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut s = store(0.3, 2.0);
        let mut opt = AdamW::new(0.0, 0.05);
        opt.step(&mut s, false).unwrap();
        assert_eq!(s.get(crate::autodiff::ParamId(0)).item(), 0.3);
    }

    #[test]
    fn missing_grad_names_parameter() {
        let mut s = ParamStore::new();
        s.add("encoder.w", Tensor::scalar(1.0));
        let err = AdamW::new(0.1, 0.0).step(&mut s, false).unwrap_err();
        assert!(err.to_string().contains("encoder.w"));
    }

    #[test]
    fn step_counter_increments() {
        let mut s = store(1.0, 1.0);
        let mut opt = AdamW::new(0.01, 0.0);
        for k in 1..=3 {
            opt.step(&mut s, false).unwrap();
            assert_eq!(opt.step_count(), k);
            assert_eq!(opt.moments().0[0].len(), 1);
        }
    }

    #[test]
    fn resumed_state_matches_uninterrupted_run() {
        let mut a = store(1.0, 0.5);
        let mut opt = AdamW::new(0.05, 0.01);
        opt.step(&mut a, false).unwrap();
        let (m, v) = opt.moments();
        let mut resumed = AdamW::with_state(0.05, 0.01, opt.step_count(), m.to_vec(), v.to_vec()).unwrap();
        let mut b = a.clone();
        opt.step(&mut a, false).unwrap();
        resumed.step(&mut b, false).unwrap();
        assert_eq!(a.get(crate::autodiff::ParamId(0)).item(), b.get(crate::autodiff::ParamId(0)).item());
        assert!(AdamW::with_state(0.1, 0.0, 1, vec![vec![0.0]], vec![]).is_err());
    }
}
