use std::collections::BTreeMap;

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Feasible set a parameter is projected onto after each optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Constraint {
    Unconstrained,
    /// Elementwise lower bound.
    AtLeast(f64),
}

#[derive(Clone, Debug)]
struct Entry<E: Element> {
    tensor: Tensor<E>,
    constraint: Constraint,
}

/// Named collection of trainable parameters and non-trainable buffers.
///
/// Iteration order is the lexicographic order of names, which fixes the
/// byte layout of saved weights.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<E: Element = f32> {
    entries: BTreeMap<String, Entry<E>>,
}

impl<E: Element> ParamStore<E> {
    pub fn new() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    fn insert(&mut self, name: &str, tensor: Tensor<E>, constraint: Constraint) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::usage(format!("duplicate tensor name `{name}`")));
        }
        self.entries.insert(name.to_owned(), Entry { tensor, constraint });
        Ok(())
    }

    /// Registers a trainable tensor.
    pub fn add_param(&mut self, name: &str, tensor: Tensor<E>, constraint: Constraint) -> Result<()> {
        self.insert(name, tensor.with_requires_grad(true), constraint)
    }

    /// Registers state that is persisted but never optimized (running statistics).
    pub fn add_buffer(&mut self, name: &str, tensor: Tensor<E>) -> Result<()> {
        self.insert(name, tensor.with_requires_grad(false), Constraint::Unconstrained)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<E>> {
        self.entries
            .get(name)
            .map(|e| &e.tensor)
            .ok_or_else(|| Error::usage(format!("no tensor named `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<E>> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.tensor)
            .ok_or_else(|| Error::usage(format!("no tensor named `{name}`")))
    }

    pub fn constraint(&self, name: &str) -> Option<Constraint> {
        self.entries.get(name).map(|e| e.constraint)
    }

    /// Replaces the value of an existing tensor, keeping its flags.
    pub fn set_value(&mut self, name: &str, value: Tensor<E>) -> Result<()> {
        let slot = self.get_mut(name)?;
        if slot.shape() != value.shape() {
            return Err(Error::dim(format!(
                "`{name}` has shape {:?}, replacement has {:?}",
                slot.shape(),
                value.shape()
            )));
        }
        let requires_grad = slot.requires_grad;
        *slot = value.with_requires_grad(requires_grad);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.entries.iter().map(|(k, e)| (k.as_str(), &e.tensor))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of trainable scalars.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .values()
            .filter(|e| e.tensor.requires_grad)
            .map(|e| e.tensor.len())
            .sum()
    }

    pub fn zero_grad(&mut self) {
        for e in self.entries.values_mut() {
            e.tensor.grad = None;
        }
    }

    pub(crate) fn accumulate_grad(&mut self, name: &str, grad: &[E]) -> Result<()> {
        let t = self.get_mut(name)?;
        match &mut t.grad {
            Some(g) => g.iter_mut().zip(grad).for_each(|(a, &b)| *a += b),
            None => t.grad = Some(grad.to_vec()),
        }
        Ok(())
    }

    /// Clamps every constrained tensor back into its feasible set.
    pub fn project(&mut self) {
        for e in self.entries.values_mut() {
            if let Constraint::AtLeast(lo) = e.constraint {
                let lo = E::of(lo);
                if e.tensor.data().iter().any(|&v| v < lo) {
                    e.tensor.data_mut().iter_mut().for_each(|v| {
                        if *v < lo {
                            *v = lo;
                        }
                    });
                }
            }
        }
    }

    pub fn cast<F: Element>(&self) -> ParamStore<F> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|(k, e)| {
                    (
                        k.clone(),
                        Entry {
                            tensor: e.tensor.cast::<F>().with_requires_grad(e.tensor.requires_grad),
                            constraint: e.constraint,
                        },
                    )
                })
                .collect(),
        }
    }
}
