//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};
use crate::unet::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Float> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros: Vec<Tensor<T>> = store.iter().map(|(_, _, p)| Tensor::zeros(p.shape())).collect();
        Self {
            config,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One update. `grads[i]` belongs to parameter `i`; `None` counts as a
    /// zero gradient (moments still decay).
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        if grads.len() != self.m.len() || store.len() != self.m.len() {
            return Err(Error::invalid(format!(
                "adam: {} gradients for {} parameters ({} moments)",
                grads.len(),
                store.len(),
                self.m.len()
            )));
        }
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let ids: Vec<_> = store.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let g = grads[i].as_ref();
            if let Some(g) = g {
                if g.shape() != m.shape() {
                    return Err(Error::shape("adam", g.shape(), m.shape()));
                }
            }
            let p = store.get_mut(id);
            for j in 0..p.len() {
                let gj = g.map_or(0.0, |g| g.data()[j].as_f64());
                let mj = beta1 * m.data()[j].as_f64() + (1.0 - beta1) * gj;
                let vj = beta2 * v.data()[j].as_f64() + (1.0 - beta2) * gj * gj;
                m.data_mut()[j] = T::from_f64_lossy(mj);
                v.data_mut()[j] = T::from_f64_lossy(vj);
                let upd = lr * (mj / c1) / ((vj / c2).sqrt() + eps);
                let pj = p.data()[j].as_f64() - upd;
                p.data_mut()[j] = T::from_f64_lossy(pj);
            }
        }
        Ok(())
    }
}
