use rand::Rng;

use super::Forward;
use crate::error::Result;
use crate::tensor::{init, Constraint, Element, ParamStore, Tensor, Var};

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub bias: bool,
}

impl Conv2d {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Self {
            name: name.to_owned(),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            bias: true,
        }
    }

    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel, self.kernel]
    }

    pub fn output_extent(&self, input: usize) -> usize {
        (input + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn register<E: Element, R: Rng + ?Sized>(&self, store: &mut ParamStore<E>, rng: &mut R) -> Result<()> {
        let fan_in = self.in_channels * self.kernel * self.kernel;
        store.add_param(
            &self.weight_name(),
            init::fan_in_uniform(&self.weight_shape(), fan_in, rng),
            Constraint::Unconstrained,
        )?;
        if self.bias {
            store.add_param(
                &self.bias_name(),
                Tensor::zeros(&[self.out_channels]),
                Constraint::Unconstrained,
            )?;
        }
        Ok(())
    }

    pub fn forward<'t, E: Element>(&self, f: &Forward<'t, '_, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        let w = f.param(&self.weight_name())?;
        let b = if self.bias {
            Some(f.param(&self.bias_name())?)
        } else {
            None
        };
        x.conv2d(w, b, self.stride, self.padding)
    }
}

/// Fractionally-strided convolution; weights are C_in x C_out x k x k.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub output_padding: usize,
}

impl ConvTranspose2d {
    pub fn new(
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        output_padding: usize,
    ) -> Self {
        Self {
            name: name.to_owned(),
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            output_padding,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn output_extent(&self, input: usize) -> usize {
        (input - 1) * self.stride + self.kernel + self.output_padding - 2 * self.padding
    }

    pub fn register<E: Element, R: Rng + ?Sized>(&self, store: &mut ParamStore<E>, rng: &mut R) -> Result<()> {
        // Each output pixel sees roughly in*k*k/stride^2 taps.
        let fan_in = (self.in_channels * self.kernel * self.kernel / (self.stride * self.stride)).max(1);
        store.add_param(
            &self.weight_name(),
            init::fan_in_uniform(
                &[self.in_channels, self.out_channels, self.kernel, self.kernel],
                fan_in,
                rng,
            ),
            Constraint::Unconstrained,
        )?;
        store.add_param(
            &self.bias_name(),
            Tensor::zeros(&[self.out_channels]),
            Constraint::Unconstrained,
        )
    }

    pub fn forward<'t, E: Element>(&self, f: &Forward<'t, '_, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        let w = f.param(&self.weight_name())?;
        let b = f.param(&self.bias_name())?;
        x.conv_transpose2d(w, Some(b), self.stride, self.padding, self.output_padding)
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(name: &str, in_features: usize, out_features: usize) -> Self {
        Self {
            name: name.to_owned(),
            in_features,
            out_features,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.w", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.b", self.name)
    }

    pub fn register<E: Element, R: Rng + ?Sized>(&self, store: &mut ParamStore<E>, rng: &mut R) -> Result<()> {
        store.add_param(
            &self.weight_name(),
            init::fan_in_uniform(&[self.out_features, self.in_features], self.in_features, rng),
            Constraint::Unconstrained,
        )?;
        store.add_param(
            &self.bias_name(),
            Tensor::zeros(&[self.out_features]),
            Constraint::Unconstrained,
        )
    }

    pub fn forward<'t, E: Element>(&self, f: &Forward<'t, '_, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        let w = f.param(&self.weight_name())?;
        let b = f.param(&self.bias_name())?;
        x.linear(w, Some(b))
    }
}
