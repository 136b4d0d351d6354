//! Generalized divisive normalization (GDN), its inverse (IGDN) and softplus.
//!
//! ```text
//! GDN:  y_i = x_i / sqrt(beta_i + sum_j gamma_ij * x_j^2)
//! IGDN: x_i = y_i * sqrt(beta_i + sum_j gamma_ij * y_j^2)
//! ```
//!
//! IGDN pools over its own input, so it is a one-shot multiplicative map
//! rather than the exact inverse of GDN. With a diagonal-free `gamma` (all
//! zero) the two are mutual inverses.

use super::Forward;
use crate::error::{Error, Result};
use crate::tensor::{Constraint, Element, ParamStore, Tape, Tensor, Var};

/// Lower bound kept on every `beta_i`.
pub const BETA_MIN: f64 = 1e-6;

/// Values of one GDN/IGDN layer.
#[derive(Clone, Debug, PartialEq)]
pub struct GdnParams<E: Element = f32> {
    /// Shape `[C]`, each entry at least [`BETA_MIN`].
    pub beta: Tensor<E>,
    /// Shape `[C, C]`, nonnegative.
    pub gamma: Tensor<E>,
}

impl<E: Element> GdnParams<E> {
    /// `beta = 1`, `gamma = 0.1 * I`.
    pub fn initial(channels: usize) -> Self {
        Self {
            beta: Tensor::full(&[channels], E::one()),
            gamma: Tensor::from_fn(&[channels, channels], |k| {
                if k / channels == k % channels {
                    E::of(0.1)
                } else {
                    E::zero()
                }
            }),
        }
    }

    /// `beta = 1`, `gamma = 0`: GDN and IGDN reduce to the identity.
    pub fn identity(channels: usize) -> Self {
        Self {
            beta: Tensor::full(&[channels], E::one()),
            gamma: Tensor::zeros(&[channels, channels]),
        }
    }

    pub fn channels(&self) -> usize {
        self.beta.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        if self.beta.shape() != [c] || self.gamma.shape() != [c, c] {
            return Err(Error::dim(format!(
                "gdn params: beta {:?}, gamma {:?}",
                self.beta.shape(),
                self.gamma.shape()
            )));
        }
        if self.beta.data().iter().any(|&b| b < E::of(BETA_MIN)) || self.gamma.data().iter().any(|&g| g < E::zero()) {
            return Err(Error::usage("gdn params outside beta >= 1e-6, gamma >= 0"));
        }
        Ok(())
    }
}

fn apply<E: Element>(x: &Tensor<E>, p: &GdnParams<E>, inverse: bool) -> Result<Tensor<E>> {
    p.validate()?;
    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    let beta = tape.constant(p.beta.clone());
    let gamma = tape.constant(p.gamma.clone());
    Ok(xv.gdn(beta, gamma, inverse)?.value())
}

/// GDN of an N x C x H x W tensor.
pub fn gdn<E: Element>(x: &Tensor<E>, p: &GdnParams<E>) -> Result<Tensor<E>> {
    apply(x, p, false)
}

/// IGDN of an N x C x H x W tensor.
pub fn igdn<E: Element>(y: &Tensor<E>, p: &GdnParams<E>) -> Result<Tensor<E>> {
    apply(y, p, true)
}

/// Elementwise `ln(1 + e^x)`.
pub fn softplus<E: Element>(x: &Tensor<E>) -> Tensor<E> {
    Tensor::from_fn(x.shape(), |i| crate::tensor::softplus_scalar(x.data()[i]))
}

/// A GDN or IGDN layer whose parameters live in a store.
#[derive(Clone, Debug)]
pub struct Gdn {
    pub name: String,
    pub channels: usize,
    pub inverse: bool,
}

impl Gdn {
    pub fn new(name: &str, channels: usize, inverse: bool) -> Self {
        Self {
            name: name.to_owned(),
            channels,
            inverse,
        }
    }

    pub fn beta_name(&self) -> String {
        format!("{}.beta", self.name)
    }

    pub fn gamma_name(&self) -> String {
        format!("{}.gamma", self.name)
    }

    pub fn register<E: Element>(&self, store: &mut ParamStore<E>) -> Result<()> {
        let init = GdnParams::<E>::initial(self.channels);
        store.add_param(&self.beta_name(), init.beta, Constraint::AtLeast(BETA_MIN))?;
        store.add_param(&self.gamma_name(), init.gamma, Constraint::AtLeast(0.0))
    }

    pub fn params<E: Element>(&self, store: &ParamStore<E>) -> Result<GdnParams<E>> {
        Ok(GdnParams {
            beta: store.get(&self.beta_name())?.clone(),
            gamma: store.get(&self.gamma_name())?.clone(),
        })
    }

    pub fn forward<'t, E: Element>(&self, f: &Forward<'t, '_, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        let beta = f.param(&self.beta_name())?;
        let gamma = f.param(&self.gamma_name())?;
        x.gdn(beta, gamma, self.inverse)
    }
}
