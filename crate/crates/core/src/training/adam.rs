use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, ParamId, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam over a fixed set of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<R: Real> {
    pub config: AdamConfig,
    pub ids: Vec<ParamId>,
    pub t: u64,
    pub m: Vec<Tensor<R>>,
    pub v: Vec<Tensor<R>>,
}

impl<R: Real> Adam<R> {
    pub fn new(store: &ParamStore<R>, ids: Vec<ParamId>, config: AdamConfig) -> Self {
        let zeros = |id: &ParamId| Tensor::zeros(store.value(*id).shape().to_vec());
        Adam {
            config,
            m: ids.iter().map(zeros).collect(),
            v: ids.iter().map(zeros).collect(),
            ids,
            t: 0,
        }
    }

    /// One update from a full set of gradients; parameters the gradients do
    /// not reach are left untouched, moments included.
    pub fn step(&mut self, store: &mut ParamStore<R>, grads: &Gradients<R>) -> Result<()> {
        let list: Vec<Option<&Tensor<R>>> = self.ids.iter().map(|&id| grads.param(id)).collect();
        self.apply(store, &list)
    }

    /// Update from per-parameter gradients in `ids` order.
    pub fn apply(&mut self, store: &mut ParamStore<R>, grads: &[Option<&Tensor<R>>]) -> Result<()> {
        if grads.len() != self.ids.len() {
            return Err(Error::Dimension(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.ids.len()
            )));
        }
        for (k, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                let shape = store.value(self.ids[k]).shape();
                if g.shape() != shape {
                    return Err(Error::Dimension(format!(
                        "gradient {:?} for parameter {} of shape {:?}",
                        g.shape(),
                        store.name(self.ids[k]),
                        shape
                    )));
                }
            }
        }
        self.t += 1;
        let c = self.config;
        let (b1, b2) = (R::of(c.beta1), R::of(c.beta2));
        let (one_b1, one_b2) = (R::of(1.0 - c.beta1), R::of(1.0 - c.beta2));
        let bc1 = R::of(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = R::of(1.0 - c.beta2.powi(self.t as i32));
        let (lr, eps) = (R::of(c.lr), R::of(c.eps));
        for (k, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let p = store.data_mut(self.ids[k]);
            for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let mhat = *m / bc1;
                let vhat = *v / bc2;
                *p = *p - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(v: &[f64]) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::new(vec![v.len()], v.to_vec()).unwrap()).unwrap();
        (s, id)
    }

    #[test]
    fn first_step_moves_by_lr() {
        let (mut s, id) = store(&[0.5]);
        let mut adam = Adam::new(&s, vec![id], AdamConfig::default());
        let g = Tensor::new(vec![1], vec![1.0]).unwrap();
        adam.apply(&mut s, &[Some(&g)]).unwrap();
        let delta = s.value(id).data()[0] - 0.5;
        assert!((delta + 1e-4 / (1.0 + 1e-8)).abs() < 1e-15, "{delta}");
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let (mut s, id) = store(&[0.5, -2.0]);
        let mut adam = Adam::new(&s, vec![id], AdamConfig::default());
        let g = Tensor::zeros(vec![2]);
        for _ in 0..3 {
            adam.apply(&mut s, &[Some(&g)]).unwrap();
        }
        assert_eq!(s.value(id).data(), &[0.5, -2.0]);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let (mut s, id) = store(&[0.5, -2.0]);
        let mut adam = Adam::new(&s, vec![id], AdamConfig::default());
        let g = Tensor::zeros(vec![3]);
        assert!(matches!(adam.apply(&mut s, &[Some(&g)]), Err(Error::Dimension(_))));
        assert!(matches!(adam.apply(&mut s, &[]), Err(Error::Dimension(_))));
        assert_eq!(adam.t, 0);
    }

    #[test]
    fn converges_on_quadratic() {
        let (mut s, id) = store(&[3.0]);
        let cfg = AdamConfig {
            lr: 0.05,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(&s, vec![id], cfg);
        for _ in 0..2000 {
            let w = s.value(id).data()[0];
            let g = Tensor::new(vec![1], vec![2.0 * (w - 1.0)]).unwrap();
            adam.apply(&mut s, &[Some(&g)]).unwrap();
        }
        assert!((s.value(id).data()[0] - 1.0).abs() < 1e-2);
    }
}
