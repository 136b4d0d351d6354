//! The complete network: Siamese auto-encoder, rivalry maps, fusion and
//! regressor, sharing one [`ParamStore`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::Autoencoder;
use crate::error::Result;
use crate::layers::Forward;
use crate::regressor::{BackboneKind, Fusion, QualityRegressor};
use crate::rivalry::{residual_error_map, PriorGenerator, RivalryBundle};
use crate::tensor::{Element, ParamStore, Var};

/// Weight groups trained with separate learning rates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamGroup {
    /// Encoder and decoder (`enc.`, `dec.`).
    Autoencoder,
    /// Regression backbone and head (`reg.`).
    Regressor,
    /// Prior generation and fusion (`pri.`, `fus.`).
    Fusion,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [ParamGroup::Autoencoder, ParamGroup::Regressor, ParamGroup::Fusion];

    pub fn of(name: &str) -> Option<Self> {
        let prefix = name.split('.').next()?;
        match prefix {
            "enc" | "dec" => Some(ParamGroup::Autoencoder),
            "reg" => Some(ParamGroup::Regressor),
            "pri" | "fus" => Some(ParamGroup::Fusion),
            _ => None,
        }
    }

    pub fn prefixes(self) -> &'static [&'static str] {
        match self {
            ParamGroup::Autoencoder => &["enc.", "dec."],
            ParamGroup::Regressor => &["reg."],
            ParamGroup::Fusion => &["pri.", "fus."],
        }
    }
}

/// Everything a stereo forward pass leaves on the tape.
#[derive(Clone, Copy, Debug)]
pub struct StereoForward<'t, E: Element = f32> {
    pub reconstruction_left: Var<'t, E>,
    pub reconstruction_right: Var<'t, E>,
    pub maps: RivalryBundle<'t, E>,
    pub fused: Var<'t, E>,
    /// N x 1, on the standardized label scale.
    pub prediction: Var<'t, E>,
}

#[derive(Clone, Debug)]
pub struct PadNet {
    pub autoencoder: Autoencoder,
    pub prior: PriorGenerator,
    pub fusion: Fusion,
    pub regressor: QualityRegressor,
}

impl Default for PadNet {
    fn default() -> Self {
        Self::new(BackboneKind::default())
    }
}

impl PadNet {
    pub fn new(backbone: BackboneKind) -> Self {
        Self {
            autoencoder: Autoencoder::new(),
            prior: PriorGenerator::new(),
            fusion: Fusion::new(),
            regressor: QualityRegressor::new(backbone),
        }
    }

    /// Registers every tensor with fresh initial values.
    pub fn register<E: Element, R: Rng + ?Sized>(&self, store: &mut ParamStore<E>, rng: &mut R) -> Result<()> {
        self.autoencoder.register(store, rng)?;
        self.prior.register(store, rng)?;
        self.fusion.register(store, rng)?;
        self.regressor.register(store, rng)
    }

    pub fn init_store<E: Element, R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ParamStore<E>> {
        let mut store = ParamStore::new();
        self.register(&mut store, rng)?;
        Ok(store)
    }

    /// Rivalry maps of one batch of N x 3 x H x W pairs, both views through
    /// the same weights.
    pub fn rivalry<'t, E: Element>(
        &self,
        f: &Forward<'t, '_, E>,
        left: Var<'t, E>,
        right: Var<'t, E>,
    ) -> Result<(RivalryBundle<'t, E>, Var<'t, E>, Var<'t, E>)> {
        let (h, w) = {
            let s = left.shape();
            (s[2], s[3])
        };
        let view = |x: Var<'t, E>| -> Result<(Var<'t, E>, Var<'t, E>, Var<'t, E>)> {
            let features = self.autoencoder.encode(f, x)?;
            let recon = self.autoencoder.decode(f, features)?;
            let error = residual_error_map(x, recon)?;
            let prior = self.prior.prior_map(f, features, h, w)?;
            Ok((recon, error, prior))
        };
        let (recon_l, error_l, prior_l) = view(left)?;
        let (recon_r, error_r, prior_r) = view(right)?;
        let bundle = RivalryBundle::from_maps(error_l, error_r, prior_l, prior_r)?;
        Ok((bundle, recon_l, recon_r))
    }

    pub fn forward<'t, E: Element>(
        &self,
        f: &Forward<'t, '_, E>,
        left: Var<'t, E>,
        right: Var<'t, E>,
    ) -> Result<StereoForward<'t, E>> {
        let (maps, reconstruction_left, reconstruction_right) = self.rivalry(f, left, right)?;
        let fused = self.fusion.forward(f, left, right, &maps)?;
        let prediction = self.regressor.forward(f, fused)?;
        Ok(StereoForward {
            reconstruction_left,
            reconstruction_right,
            maps,
            fused,
            prediction,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;
    use crate::tensor::{init, Tape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn every_tensor_has_a_group() {
        let net = PadNet::default();
        let store: ParamStore<f32> = net.init_store(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for name in store.names() {
            assert!(ParamGroup::of(name).is_some(), "{name}");
        }
        for g in ParamGroup::ALL {
            assert!(store.names().any(|n| ParamGroup::of(n) == Some(g)));
        }
        assert_eq!(ParamGroup::of("enc.conv1.w"), Some(ParamGroup::Autoencoder));
        assert_eq!(ParamGroup::of("fus.gdn.beta"), Some(ParamGroup::Fusion));
        assert_eq!(ParamGroup::of("other"), None);
    }

    #[test]
    fn identical_views_give_half_maps() {
        let net = PadNet::default();
        let store: ParamStore<f32> = net.init_store(&mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let tape = Tape::new();
        let f = Forward::new(&tape, &store, Mode::Eval);
        let img = init::normal(&[1, 3, 64, 64], 0.2, &mut ChaCha8Rng::seed_from_u64(3));
        let x = tape.constant(img);
        let out = net.forward(&f, x, x).unwrap();
        let maps = out.maps.values();
        for m in [
            &maps.prior_norm_left,
            &maps.prior_norm_right,
            &maps.likelihood_norm_left,
            &maps.likelihood_norm_right,
        ] {
            assert!(m.data().iter().all(|&v| (v - 0.5).abs() < 1e-5));
        }
        assert_eq!(out.fused.shape(), vec![1, 3, 64, 64]);
        assert_eq!(out.prediction.shape(), vec![1, 1]);
    }

    #[test]
    fn symmetric_fusion_weights_make_score_view_invariant() {
        let net = PadNet::default();
        let mut store: ParamStore<f32> = net.init_store(&mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let w = store.get("fus.conv.w").unwrap().clone();
        let mut sym = w.to_vec();
        for o in 0..3 {
            for c in 0..5 {
                let avg = 0.5 * (sym[o * 10 + c] + sym[o * 10 + c + 5]);
                sym[o * 10 + c] = avg;
                sym[o * 10 + c + 5] = avg;
            }
        }
        store
            .set_value("fus.conv.w", Tensor::new(w.shape(), sym).unwrap())
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = init::normal::<f32, _>(&[1, 3, 64, 64], 0.3, &mut rng);
        let b = init::normal::<f32, _>(&[1, 3, 64, 64], 0.3, &mut rng);
        let score = |l: &Tensor<f32>, r: &Tensor<f32>| {
            let tape = Tape::new();
            let f = Forward::new(&tape, &store, Mode::Eval);
            net.forward(&f, tape.constant(l.clone()), tape.constant(r.clone()))
                .unwrap()
                .prediction
                .item()
                .unwrap()
        };
        let (s1, s2) = (score(&a, &b), score(&b, &a));
        assert!((s1 - s2).abs() <= 1e-5 * s1.abs().max(1.0), "{s1} vs {s2}");
    }
}
