use rand::Rng;

use super::{BatchNorm2d, Conv2d, Forward};
use crate::error::{Error, Result};
use crate::tensor::{Element, ParamStore, Var};

/// ResNet basic block: two 3x3 conv + batch-norm stages around an identity
/// or 1x1-projection shortcut.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub name: String,
    pub stride: usize,
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    projection: Option<(Conv2d, BatchNorm2d)>,
}

impl ResidualBlock {
    pub fn new(name: &str, in_channels: usize, out_channels: usize, stride: usize) -> Result<Self> {
        if !(1..=2).contains(&stride) {
            return Err(Error::usage(format!(
                "residual block stride must be 1 or 2, got {stride}"
            )));
        }
        let projection = (stride != 1 || in_channels != out_channels).then(|| {
            (
                Conv2d::new(&format!("{name}.down.conv"), in_channels, out_channels, 1, stride, 0).without_bias(),
                BatchNorm2d::new(&format!("{name}.down.bn"), out_channels),
            )
        });
        Ok(Self {
            name: name.to_owned(),
            stride,
            conv1: Conv2d::new(&format!("{name}.conv1"), in_channels, out_channels, 3, stride, 1).without_bias(),
            bn1: BatchNorm2d::new(&format!("{name}.bn1"), out_channels),
            conv2: Conv2d::new(&format!("{name}.conv2"), out_channels, out_channels, 3, 1, 1).without_bias(),
            bn2: BatchNorm2d::new(&format!("{name}.bn2"), out_channels),
            projection,
        })
    }

    pub fn has_projection(&self) -> bool {
        self.projection.is_some()
    }

    pub fn conv_layers(&self) -> Vec<&Conv2d> {
        let mut v = vec![&self.conv1, &self.conv2];
        v.extend(self.projection.as_ref().map(|(c, _)| c));
        v
    }

    pub fn register<E: Element, R: Rng + ?Sized>(&self, store: &mut ParamStore<E>, rng: &mut R) -> Result<()> {
        self.conv1.register(store, rng)?;
        self.bn1.register(store)?;
        self.conv2.register(store, rng)?;
        self.bn2.register(store)?;
        if let Some((conv, bn)) = &self.projection {
            conv.register(store, rng)?;
            bn.register(store)?;
        }
        Ok(())
    }

    pub fn forward<'t, E: Element>(&self, f: &Forward<'t, '_, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        let in_channels = x.shape().get(1).copied().unwrap_or(0);
        if in_channels != self.conv1.in_channels {
            return Err(Error::dim(format!(
                "block {} expects {} channels, got {:?}",
                self.name,
                self.conv1.in_channels,
                x.shape()
            )));
        }
        let h = self.conv1.forward(f, x)?;
        let h = self.bn1.forward(f, h)?.relu()?;
        let h = self.conv2.forward(f, h)?;
        let h = self.bn2.forward(f, h)?;
        let shortcut = match &self.projection {
            Some((conv, bn)) => bn.forward(f, conv.forward(f, x)?)?,
            None => x,
        };
        h.add(shortcut)?.relu()
    }
}

/// Applies a registered block to `x` in a fresh forward context.
pub fn residual_basic_block<'t, E: Element>(
    f: &Forward<'t, '_, E>,
    block: &ResidualBlock,
    x: Var<'t, E>,
) -> Result<Var<'t, E>> {
    block.forward(f, x)
}
