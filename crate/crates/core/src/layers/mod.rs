//! Parameterized layers built on the tensor engine.
//!
//! A layer only stores its tensor names and hyper-parameters; the values
//! live in a [`ParamStore`] so that whole models can be saved, partially
//! loaded and optimized by name prefix.

mod conv;
mod gdn;
mod norm;
mod residual;

use std::cell::RefCell;

use crate::error::Result;
use crate::tensor::{Element, ParamStore, Tape, Var};

pub use conv::{Conv2d, ConvTranspose2d, Linear};
pub use gdn::{gdn, igdn, softplus, Gdn, GdnParams};
pub use norm::BatchNorm2d;
pub use residual::{residual_basic_block, ResidualBlock};

/// Whether batch norm uses batch statistics (and records them) or running ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One forward pass: the tape being recorded, the weights it reads and the
/// running-statistic updates it produces.
pub struct Forward<'t, 's, E: Element = f32> {
    pub tape: &'t Tape<E>,
    pub store: &'s ParamStore<E>,
    pub mode: Mode,
    pending: RefCell<Vec<(String, Vec<E>)>>,
}

impl<'t, 's, E: Element> Forward<'t, 's, E> {
    pub fn new(tape: &'t Tape<E>, store: &'s ParamStore<E>, mode: Mode) -> Self {
        Self {
            tape,
            store,
            mode,
            pending: RefCell::new(Vec::new()),
        }
    }

    pub fn param(&self, name: &str) -> Result<Var<'t, E>> {
        self.tape.param(self.store, name)
    }

    pub(crate) fn record_stat(&self, name: String, value: Vec<E>) {
        self.pending.borrow_mut().push((name, value));
    }

    /// Running-statistic updates collected during the pass.
    pub fn into_stat_updates(self) -> StatUpdates<E> {
        StatUpdates(self.pending.into_inner())
    }
}

/// New values for non-trainable buffers, applied after the pass.
#[derive(Debug, Default)]
pub struct StatUpdates<E: Element>(Vec<(String, Vec<E>)>);

impl<E: Element> StatUpdates<E> {
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn apply(self, store: &mut ParamStore<E>) -> Result<()> {
        for (name, value) in self.0 {
            let t = store.get_mut(&name)?;
            t.data_mut().copy_from_slice(&value);
        }
        Ok(())
    }
}
