use serde::{Deserialize, Serialize};

use super::graph::{Grads, Mat};
use super::params::{Group, ParamStore};

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    #[serde(skip)]
    pub(crate) first: Vec<Option<Mat>>,
    #[serde(skip)]
    pub(crate) second: Vec<Option<Mat>>,
}

impl AdamW {
    pub fn new(weight_decay: f64, n_params: usize) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first: vec![None; n_params],
            second: vec![None; n_params],
        }
    }

    /// One update. Parameters in `frozen` groups, or without a gradient,
    /// are left untouched, including weight decay.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads, lr: f64, frozen: &[Group]) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = grads.get(id) else { continue };
            let param = store.get_mut(id);
            if frozen.contains(&param.group) {
                continue;
            }
            let m = self.first[id.0].get_or_insert_with(|| Mat::zeros(g.dim()));
            m.zip_mut_with(g, |m, &g| *m = self.beta1 * *m + (1.0 - self.beta1) * g);
            let v = self.second[id.0].get_or_insert_with(|| Mat::zeros(g.dim()));
            v.zip_mut_with(g, |v, &g| *v = self.beta2 * *v + (1.0 - self.beta2) * g * g);
            let m = self.first[id.0].as_ref().expect("set above");
            let v = self.second[id.0].as_ref().expect("set above");
            let decay = 1.0 - lr * self.weight_decay;
            ndarray::Zip::from(&mut param.value)
                .and(m)
                .and(v)
                .for_each(|p, &m, &v| {
                    *p = *p * decay - lr * (m / bc1) / ((v / bc2).sqrt() + self.eps);
                });
        }
    }

    pub fn moments(&self) -> impl Iterator<Item = (usize, Option<&Mat>, Option<&Mat>)> {
        (0..self.first.len()).map(|i| (i, self.first[i].as_ref(), self.second[i].as_ref()))
    }

    pub fn set_moments(&mut self, index: usize, first: Mat, second: Mat) {
        self.first[index] = Some(first);
        self.second[index] = Some(second);
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut Grads, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm > 0.0 {
        grads.scale(max_norm / norm);
    }
    norm
}
