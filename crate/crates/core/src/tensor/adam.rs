use std::collections::BTreeMap;

use super::{Element, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for every parameter the optimizer has touched.
#[derive(Clone, Debug)]
pub struct AdamState<E: Element = f32> {
    pub step_count: u64,
    pub config: AdamConfig,
    moments: BTreeMap<String, (Vec<E>, Vec<E>)>,
}

impl<E: Element> AdamState<E> {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            step_count: 0,
            config,
            moments: BTreeMap::new(),
        }
    }

    pub fn moments(&self, name: &str) -> Option<(&[E], &[E])> {
        self.moments.get(name).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    /// One bias-corrected Adam update.
    ///
    /// `learning_rate(name)` selects the parameters to update: `None` leaves a
    /// parameter untouched. Gradients are read, not cleared. Constrained
    /// parameters are projected afterwards.
    pub fn step(&mut self, store: &mut ParamStore<E>, learning_rate: impl Fn(&str) -> Option<f64>) -> Result<()> {
        let selected: Vec<(String, f64)> = store
            .iter()
            .filter(|(_, t)| t.requires_grad)
            .filter_map(|(name, _)| learning_rate(name).map(|lr| (name.to_owned(), lr)))
            .collect();
        for (name, _) in &selected {
            if store.get(name)?.grad.is_none() {
                return Err(Error::usage(format!("parameter `{name}` has no gradient")));
            }
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let correction1 = 1.0 - beta1.powi(t);
        let correction2 = 1.0 - beta2.powi(t);
        let (b1, b2, eps_e) = (E::of(beta1), E::of(beta2), E::of(eps));
        let (one_b1, one_b2) = (E::one() - b1, E::one() - b2);
        let (c1, c2) = (E::of(correction1), E::of(correction2));

        for (name, lr) in selected {
            let lr = E::of(lr);
            let tensor = store.get_mut(&name)?;
            let grad = tensor.grad.take().expect("checked above");
            let (m, v) = self
                .moments
                .entry(name)
                .or_insert_with(|| (vec![E::zero(); grad.len()], vec![E::zero(); grad.len()]));
            for (((p, &g), m), v) in tensor
                .data_mut()
                .iter_mut()
                .zip(&grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps_e);
            }
            tensor.grad = Some(grad);
        }
        store.project();
        Ok(())
    }
}
