use super::{Forward, Mode};
use crate::error::Result;
use crate::tensor::{Constraint, Element, ParamStore, Tensor, Var};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

/// Per-channel batch normalization with running statistics.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub name: String,
    pub channels: usize,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            name: name.to_owned(),
            channels,
        }
    }

    fn tensor(&self, suffix: &str) -> String {
        format!("{}.{suffix}", self.name)
    }

    pub fn register<E: Element>(&self, store: &mut ParamStore<E>) -> Result<()> {
        let c = self.channels;
        store.add_param(
            &self.tensor("gamma"),
            Tensor::full(&[c], E::one()),
            Constraint::Unconstrained,
        )?;
        store.add_param(&self.tensor("beta"), Tensor::zeros(&[c]), Constraint::Unconstrained)?;
        store.add_buffer(&self.tensor("running_mean"), Tensor::zeros(&[c]))?;
        store.add_buffer(&self.tensor("running_var"), Tensor::full(&[c], E::one()))
    }

    pub fn forward<'t, E: Element>(&self, f: &Forward<'t, '_, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        let gamma = f.param(&self.tensor("gamma"))?;
        let beta = f.param(&self.tensor("beta"))?;
        let mean_name = self.tensor("running_mean");
        let var_name = self.tensor("running_var");
        let running_mean = f.store.get(&mean_name)?;
        let running_var = f.store.get(&var_name)?;
        match f.mode {
            Mode::Eval => x.batch_norm_eval(gamma, beta, running_mean.data(), running_var.data(), BN_EPS),
            Mode::Train => {
                let (y, stats) = x.batch_norm_train(gamma, beta, BN_EPS)?;
                let m = E::of(BN_MOMENTUM);
                let blend = |old: &[E], new: &[E]| -> Vec<E> {
                    old.iter().zip(new).map(|(&o, &n)| (E::one() - m) * o + m * n).collect()
                };
                f.record_stat(mean_name, blend(running_mean.data(), &stats.mean));
                f.record_stat(var_name, blend(running_var.data(), &stats.var));
                Ok(y)
            }
        }
    }
}
