//! Fusion of images and rivalry maps, and the residual quality regressor.
//!
//! | stage            | output (256 input) |
//! |------------------|--------------------|
//! | concat           | 10 x 256 x 256     |
//! | fusion conv+GDN  | 3 x 256 x 256      |
//! | stem 7x7/2 + max | 64 x 64 x 64       |
//! | layer1..layer4   | 512 x 8 x 8        |
//! | global max pool  | 512                |
//! | fc               | 1                  |
//!
//! The head predicts on a standardized label scale; the affine map back to
//! score units lives in two buffers (`reg.label.shift`, `reg.label.scale`)
//! so it travels with the backbone weights.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::IMAGE_CHANNELS;
use crate::error::{Error, Result};
use crate::layers::{BatchNorm2d, Conv2d, Forward, Gdn, Linear, ResidualBlock};
use crate::rivalry::RivalryBundle;
use crate::tensor::{Element, ParamStore, Tensor, Var};

pub const FUSION_INPUT_CHANNELS: usize = 10;
pub const FEATURE_WIDTH: usize = 512;
/// Total down-sampling factor of the backbone.
pub const BACKBONE_STRIDE: usize = 32;
pub const LABEL_SHIFT: &str = "reg.label.shift";
pub const LABEL_SCALE: &str = "reg.label.scale";

/// Conv(1x1, 10 -> 3) followed by GDN over the concatenated maps and images.
#[derive(Clone, Debug)]
pub struct Fusion {
    conv: Conv2d,
    gdn: Gdn,
}

impl Default for Fusion {
    fn default() -> Self {
        Self::new()
    }
}

impl Fusion {
    pub fn new() -> Self {
        Self {
            conv: Conv2d::new("fus.conv", FUSION_INPUT_CHANNELS, IMAGE_CHANNELS, 1, 1, 0),
            gdn: Gdn::new("fus.gdn", IMAGE_CHANNELS, false),
        }
    }

    pub fn conv(&self) -> &Conv2d {
        &self.conv
    }

    pub fn gdn(&self) -> &Gdn {
        &self.gdn
    }

    pub fn register<E: Element, R: Rng + ?Sized>(&self, store: &mut ParamStore<E>, rng: &mut R) -> Result<()> {
        self.conv.register(store, rng)?;
        self.gdn.register(store)
    }

    /// Channel order: `P_nl, L_nl, I_l, P_nr, L_nr, I_r`.
    pub fn concat<'t, E: Element>(
        left: Var<'t, E>,
        right: Var<'t, E>,
        maps: &RivalryBundle<'t, E>,
    ) -> Result<Var<'t, E>> {
        Var::concat_channels(&[
            maps.prior_norm_left,
            maps.likelihood_norm_left,
            left,
            maps.prior_norm_right,
            maps.likelihood_norm_right,
            right,
        ])
    }

    pub fn forward<'t, E: Element>(
        &self,
        f: &Forward<'t, '_, E>,
        left: Var<'t, E>,
        right: Var<'t, E>,
        maps: &RivalryBundle<'t, E>,
    ) -> Result<Var<'t, E>> {
        let x = Self::concat(left, right, maps)?;
        self.gdn.forward(f, self.conv.forward(f, x)?)
    }
}

/// Residual backbone depth; both variants use basic blocks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackboneKind {
    #[default]
    ResNet18,
    ResNet34,
}

impl BackboneKind {
    pub fn blocks_per_stage(self) -> [usize; 4] {
        match self {
            BackboneKind::ResNet18 => [2, 2, 2, 2],
            BackboneKind::ResNet34 => [3, 4, 6, 3],
        }
    }
}

impl std::str::FromStr for BackboneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "resnet18" | "resnet-18" => Ok(BackboneKind::ResNet18),
            "resnet34" | "resnet-34" => Ok(BackboneKind::ResNet34),
            _ => Err(Error::usage(format!("unknown backbone {s:?}"))),
        }
    }
}

/// Stem, four residual stages, global max pool and a scalar head.
#[derive(Clone, Debug)]
pub struct QualityRegressor {
    kind: BackboneKind,
    stem_conv: Conv2d,
    stem_bn: BatchNorm2d,
    blocks: Vec<ResidualBlock>,
    head: Linear,
}

impl Default for QualityRegressor {
    fn default() -> Self {
        Self::new(BackboneKind::ResNet18)
    }
}

impl QualityRegressor {
    pub fn new(kind: BackboneKind) -> Self {
        let widths = [64, 128, 256, FEATURE_WIDTH];
        let mut blocks = Vec::new();
        let mut in_channels = 64;
        for (stage, (&width, &count)) in widths.iter().zip(&kind.blocks_per_stage()).enumerate() {
            for i in 0..count {
                let stride = if stage > 0 && i == 0 { 2 } else { 1 };
                let name = format!("reg.layer{}.{}", stage + 1, i);
                blocks.push(ResidualBlock::new(&name, in_channels, width, stride).expect("valid block config"));
                in_channels = width;
            }
        }
        Self {
            kind,
            stem_conv: Conv2d::new("reg.stem.conv", IMAGE_CHANNELS, 64, 7, 2, 3).without_bias(),
            stem_bn: BatchNorm2d::new("reg.stem.bn", 64),
            blocks,
            head: Linear::new("reg.fc", FEATURE_WIDTH, 1),
        }
    }

    pub fn kind(&self) -> BackboneKind {
        self.kind
    }

    pub fn blocks(&self) -> &[ResidualBlock] {
        &self.blocks
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    pub fn register<E: Element, R: Rng + ?Sized>(&self, store: &mut ParamStore<E>, rng: &mut R) -> Result<()> {
        self.stem_conv.register(store, rng)?;
        self.stem_bn.register(store)?;
        for block in &self.blocks {
            block.register(store, rng)?;
        }
        self.head.register(store, rng)?;
        store.add_buffer(LABEL_SHIFT, Tensor::zeros(&[1]))?;
        store.add_buffer(LABEL_SCALE, Tensor::full(&[1], E::one()))
    }

    /// N x 3 x H x W to the N x 512 x H/32 x W/32 pre-pool features.
    pub fn features<'t, E: Element>(&self, f: &Forward<'t, '_, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        match x.shape()[..] {
            [_, c, h, w]
                if c == IMAGE_CHANNELS && h % BACKBONE_STRIDE == 0 && w % BACKBONE_STRIDE == 0 && h > 0 && w > 0 => {}
            ref s => {
                return Err(Error::dim(format!(
                    "regressor input must be N x 3 x H x W with H, W multiples of {BACKBONE_STRIDE}, got {s:?}"
                )))
            }
        }
        let h = self.stem_conv.forward(f, x)?;
        let mut h = self.stem_bn.forward(f, h)?.relu()?.max_pool2d(3, 2, 1)?;
        for block in &self.blocks {
            h = block.forward(f, h)?;
        }
        Ok(h)
    }

    /// N x 3 x H x W to N x 1 predictions on the standardized label scale.
    pub fn forward<'t, E: Element>(&self, f: &Forward<'t, '_, E>, x: Var<'t, E>) -> Result<Var<'t, E>> {
        let pooled = self.features(f, x)?.global_max_pool()?;
        self.head.forward(f, pooled)
    }
}

/// Affine map between score units and the head's standardized scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LabelScale {
    pub shift: f64,
    pub scale: f64,
}

impl Default for LabelScale {
    fn default() -> Self {
        Self { shift: 0.0, scale: 1.0 }
    }
}

impl LabelScale {
    /// Mean and standard deviation of `scores`; a zero spread keeps scale 1.
    pub fn fit(scores: &[f64]) -> Result<Self> {
        if scores.is_empty() || scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::usage("label scale needs at least one finite score"));
        }
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        let scale = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Ok(Self { shift: mean, scale })
    }

    pub fn read<E: Element>(store: &ParamStore<E>) -> Result<Self> {
        Ok(Self {
            shift: store.get(LABEL_SHIFT)?.item()?.f64(),
            scale: store.get(LABEL_SCALE)?.item()?.f64(),
        })
    }

    pub fn write<E: Element>(&self, store: &mut ParamStore<E>) -> Result<()> {
        store.set_value(LABEL_SHIFT, Tensor::scalar(E::of(self.shift)).reshape(&[1])?)?;
        store.set_value(LABEL_SCALE, Tensor::scalar(E::of(self.scale)).reshape(&[1])?)
    }

    pub fn standardize(&self, score: f64) -> f64 {
        (score - self.shift) / self.scale
    }

    pub fn to_score(&self, standardized: f64) -> f64 {
        standardized * self.scale + self.shift
    }
}

/// Mean squared error between predictions and labels, both N x 1.
pub fn quality_loss<'t, E: Element>(predicted: Var<'t, E>, labels: Var<'t, E>) -> Result<Var<'t, E>> {
    if predicted.shape() != labels.shape() {
        return Err(Error::dim(format!(
            "quality loss: {:?} vs {:?}",
            predicted.shape(),
            labels.shape()
        )));
    }
    predicted.mse(labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;
    use crate::tensor::{init, Tape};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn regressor_store(seed: u64) -> (QualityRegressor, ParamStore<f32>) {
        let reg = QualityRegressor::default();
        let mut store = ParamStore::new();
        reg.register(&mut store, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        (reg, store)
    }

    #[test]
    fn block_layout() {
        let reg = QualityRegressor::default();
        assert_eq!(reg.blocks().len(), 8);
        let projections: Vec<bool> = reg.blocks().iter().map(|b| b.has_projection()).collect();
        assert_eq!(projections, [false, false, true, false, true, false, true, false]);
        assert_eq!(QualityRegressor::new(BackboneKind::ResNet34).blocks().len(), 16);
        assert_eq!("resnet18".parse::<BackboneKind>().unwrap(), BackboneKind::ResNet18);
        assert!("vgg".parse::<BackboneKind>().is_err());
    }

    #[test]
    fn test_profile_shapes() {
        let (reg, store) = regressor_store(3);
        let tape = Tape::new();
        let f = Forward::new(&tape, &store, Mode::Eval);
        let x = tape.constant(init::normal(&[2, 3, 64, 64], 0.5, &mut ChaCha8Rng::seed_from_u64(4)));
        assert_eq!(reg.features(&f, x).unwrap().shape(), vec![2, 512, 2, 2]);
        assert_eq!(reg.forward(&f, x).unwrap().shape(), vec![2, 1]);
        let bad = tape.constant(Tensor::zeros(&[1, 3, 48, 64]));
        assert!(matches!(reg.features(&f, bad), Err(Error::Dimension(_))));
    }

    #[test]
    fn zero_head_returns_bias() {
        let (reg, mut store) = regressor_store(5);
        store.set_value("reg.fc.w", Tensor::zeros(&[1, 512])).unwrap();
        store
            .set_value("reg.fc.b", Tensor::new(&[1], vec![0.75]).unwrap())
            .unwrap();
        let tape = Tape::new();
        let f = Forward::new(&tape, &store, Mode::Eval);
        let x = tape.constant(init::normal(&[3, 3, 32, 32], 1.0, &mut ChaCha8Rng::seed_from_u64(6)));
        let y = reg.forward(&f, x).unwrap().value();
        assert_eq!(y.data(), &[0.75, 0.75, 0.75]);
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let (reg, store) = regressor_store(7);
        let x = init::normal(&[1, 3, 64, 64], 0.5, &mut ChaCha8Rng::seed_from_u64(8));
        let run = || {
            let tape = Tape::new();
            let f = Forward::new(&tape, &store, Mode::Eval);
            let y = reg.forward(&f, tape.constant(x.clone())).unwrap().value();
            assert!(f.into_stat_updates().is_empty());
            y
        };
        assert_eq!(run().data()[0].to_bits(), run().data()[0].to_bits());
    }

    #[test]
    fn label_scale_round_trip() {
        let ls = LabelScale::fit(&[20.0, 60.0, 100.0]).unwrap();
        assert!((ls.shift - 60.0).abs() < 1e-12);
        assert!((ls.to_score(ls.standardize(37.5)) - 37.5).abs() < 1e-12);
        assert_eq!(
            LabelScale::fit(&[50.0, 50.0]).unwrap(),
            LabelScale {
                shift: 50.0,
                scale: 1.0
            }
        );
        assert!(LabelScale::fit(&[]).is_err());
        let (_, mut store) = regressor_store(1);
        assert_eq!(LabelScale::read(&store).unwrap(), LabelScale::default());
        ls.write(&mut store).unwrap();
        let back = LabelScale::read(&store).unwrap();
        assert!((back.shift - 60.0).abs() < 1e-4 && (back.scale - ls.scale).abs() < 1e-4);
    }

    fn constant_bundle<'t>(tape: &'t Tape<f64>, h: usize, w: usize, rng: &mut ChaCha8Rng) -> RivalryBundle<'t, f64> {
        let mut m = || tape.constant(init::normal::<f64, _>(&[1, 1, h, w], 1.0, rng).map_abs());
        RivalryBundle::from_maps(m(), m(), m(), m()).unwrap()
    }

    trait MapAbs {
        fn map_abs(self) -> Self;
    }

    impl MapAbs for Tensor<f64> {
        fn map_abs(mut self) -> Self {
            self.data_mut().iter_mut().for_each(|v| *v = v.abs());
            self
        }
    }

    #[test]
    fn fusion_zero_weights_give_zero() {
        let fusion = Fusion::new();
        let mut store = ParamStore::<f64>::new();
        fusion.register(&mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        store.set_value("fus.conv.w", Tensor::zeros(&[3, 10, 1, 1])).unwrap();
        let tape = Tape::new();
        let f = Forward::new(&tape, &store, Mode::Eval);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let maps = constant_bundle(&tape, 8, 8, &mut rng);
        let l = tape.constant(init::normal(&[1, 3, 8, 8], 1.0, &mut rng));
        let r = tape.constant(init::normal(&[1, 3, 8, 8], 1.0, &mut rng));
        let y = fusion.forward(&f, l, r, &maps).unwrap().value();
        assert_eq!(y.shape(), &[1, 3, 8, 8]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fusion_with_identity_gdn_is_a_channel_mix() {
        let fusion = Fusion::new();
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        fusion.register(&mut store, &mut rng).unwrap();
        store.set_value("fus.gdn.gamma", Tensor::zeros(&[3, 3])).unwrap();
        store
            .set_value("fus.conv.b", Tensor::new(&[3], vec![0.1, -0.2, 0.3]).unwrap())
            .unwrap();
        let (h, w) = (4, 5);
        let tape = Tape::new();
        let f = Forward::new(&tape, &store, Mode::Eval);
        let maps = constant_bundle(&tape, h, w, &mut rng);
        let l = tape.constant(init::normal(&[1, 3, h, w], 1.0, &mut rng));
        let r = tape.constant(init::normal(&[1, 3, h, w], 1.0, &mut rng));
        let y = fusion.forward(&f, l, r, &maps).unwrap().value();

        let m = maps.values();
        let (lv, rv) = (l.value(), r.value());
        let wt = store.get("fus.conv.w").unwrap().data().to_vec();
        let bias = store.get("fus.conv.b").unwrap().data().to_vec();
        for p in 0..h * w {
            let input = [
                m.prior_norm_left.data()[p],
                m.likelihood_norm_left.data()[p],
                lv.data()[p],
                lv.data()[h * w + p],
                lv.data()[2 * h * w + p],
                m.prior_norm_right.data()[p],
                m.likelihood_norm_right.data()[p],
                rv.data()[p],
                rv.data()[h * w + p],
                rv.data()[2 * h * w + p],
            ];
            for o in 0..3 {
                let expected: f64 = bias[o] + (0..10).map(|c| wt[o * 10 + c] * input[c]).sum::<f64>();
                assert!((y.data()[o * h * w + p] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn quality_loss_values() {
        let tape = Tape::<f64>::new();
        let p = tape.constant(Tensor::new(&[2, 1], vec![1.0, 3.0]).unwrap());
        let q = tape.constant(Tensor::new(&[2, 1], vec![2.0, 1.0]).unwrap());
        assert!((quality_loss(p, q).unwrap().item().unwrap() - 2.5).abs() < 1e-15);
        assert_eq!(quality_loss(p, p).unwrap().item().unwrap(), 0.0);
    }
}
