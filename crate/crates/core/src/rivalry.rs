//! Per-view likelihood and prior maps, normalized across the two views.
//!
//! The error map of a view is the channel-mean squared reconstruction
//! residual. The prior map of a view comes from its encoder features:
//! softplus, a 1x1 conv down to one channel, softplus, bilinear up-sampling
//! to the image extent, then squaring. Both pairs of maps are then divided
//! by their left+right sum; for likelihoods the roles are crossed, so the
//! view with the smaller error receives the larger likelihood.

use rand::Rng;

use crate::autoencoder::FEATURE_CHANNELS;
use crate::error::{Error, Result};
use crate::layers::{Conv2d, Forward};
use crate::tensor::{Element, ParamStore, Tensor, Var};

/// Smoothing constant of the cross-view normalization.
pub const NORM_EPS: f64 = 1e-8;

/// The 192 -> 1 prior-generation convolution.
#[derive(Clone, Debug)]
pub struct PriorGenerator {
    conv: Conv2d,
}

impl Default for PriorGenerator {
    fn default() -> Self {
        Self::new()
    }
}

impl PriorGenerator {
    pub fn new() -> Self {
        Self {
            conv: Conv2d::new("pri.conv5", FEATURE_CHANNELS, 1, 1, 1, 0),
        }
    }

    pub fn conv(&self) -> &Conv2d {
        &self.conv
    }

    pub fn register<E: Element, R: Rng + ?Sized>(&self, store: &mut ParamStore<E>, rng: &mut R) -> Result<()> {
        self.conv.register(store, rng)
    }

    /// N x 192 x h x w features to an N x 1 x H x W nonnegative prior map.
    pub fn prior_map<'t, E: Element>(
        &self,
        f: &Forward<'t, '_, E>,
        features: Var<'t, E>,
        out_h: usize,
        out_w: usize,
    ) -> Result<Var<'t, E>> {
        let h = features.softplus()?;
        let h = self.conv.forward(f, h)?.softplus()?;
        h.upsample_bilinear(out_h, out_w)?.square()
    }
}

/// Channel-mean squared difference: N x C x H x W pairs to N x 1 x H x W.
pub fn residual_error_map<'t, E: Element>(input: Var<'t, E>, reconstruction: Var<'t, E>) -> Result<Var<'t, E>> {
    if input.shape() != reconstruction.shape() {
        return Err(Error::dim(format!(
            "error map: {:?} vs {:?}",
            input.shape(),
            reconstruction.shape()
        )));
    }
    input.sub(reconstruction)?.square()?.mean_channels()
}

/// `(a + eps/2) / (a + b + eps)`; both-zero inputs give exactly 1/2.
fn share<'t, E: Element>(a: Var<'t, E>, b: Var<'t, E>) -> Result<Var<'t, E>> {
    let num = a.add_scalar(E::of(NORM_EPS / 2.0))?;
    let den = a.add(b)?.add_scalar(E::of(NORM_EPS))?;
    num.div(den)
}

fn check_pair<E: Element>(a: &Var<'_, E>, b: &Var<'_, E>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "map pair shapes {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `(P_nl, P_nr)`, each view's share of the summed prior.
pub fn normalize_priors<'t, E: Element>(left: Var<'t, E>, right: Var<'t, E>) -> Result<(Var<'t, E>, Var<'t, E>)> {
    check_pair(&left, &right)?;
    Ok((share(left, right)?, share(right, left)?))
}

/// `(L_nl, L_nr)`: the left likelihood is the right view's share of the
/// summed error, and vice versa.
pub fn normalize_likelihoods<'t, E: Element>(
    error_left: Var<'t, E>,
    error_right: Var<'t, E>,
) -> Result<(Var<'t, E>, Var<'t, E>)> {
    check_pair(&error_left, &error_right)?;
    Ok((share(error_right, error_left)?, share(error_left, error_right)?))
}

/// All rivalry maps of a batch of stereo pairs, still on the tape.
#[derive(Clone, Copy, Debug)]
pub struct RivalryBundle<'t, E: Element = f32> {
    pub error_left: Var<'t, E>,
    pub error_right: Var<'t, E>,
    pub prior_left: Var<'t, E>,
    pub prior_right: Var<'t, E>,
    pub prior_norm_left: Var<'t, E>,
    pub prior_norm_right: Var<'t, E>,
    pub likelihood_norm_left: Var<'t, E>,
    pub likelihood_norm_right: Var<'t, E>,
}

impl<'t, E: Element> RivalryBundle<'t, E> {
    pub fn from_maps(
        error_left: Var<'t, E>,
        error_right: Var<'t, E>,
        prior_left: Var<'t, E>,
        prior_right: Var<'t, E>,
    ) -> Result<Self> {
        let (prior_norm_left, prior_norm_right) = normalize_priors(prior_left, prior_right)?;
        let (likelihood_norm_left, likelihood_norm_right) = normalize_likelihoods(error_left, error_right)?;
        Ok(Self {
            error_left,
            error_right,
            prior_left,
            prior_right,
            prior_norm_left,
            prior_norm_right,
            likelihood_norm_left,
            likelihood_norm_right,
        })
    }

    pub fn values(&self) -> RivalryMaps<E> {
        RivalryMaps {
            error_left: self.error_left.value(),
            error_right: self.error_right.value(),
            prior_left: self.prior_left.value(),
            prior_right: self.prior_right.value(),
            prior_norm_left: self.prior_norm_left.value(),
            prior_norm_right: self.prior_norm_right.value(),
            likelihood_norm_left: self.likelihood_norm_left.value(),
            likelihood_norm_right: self.likelihood_norm_right.value(),
        }
    }
}

/// Detached copy of a [`RivalryBundle`], each map N x 1 x H x W.
#[derive(Clone, Debug, PartialEq)]
pub struct RivalryMaps<E: Element = f32> {
    pub error_left: Tensor<E>,
    pub error_right: Tensor<E>,
    pub prior_left: Tensor<E>,
    pub prior_right: Tensor<E>,
    pub prior_norm_left: Tensor<E>,
    pub prior_norm_right: Tensor<E>,
    pub likelihood_norm_left: Tensor<E>,
    pub likelihood_norm_right: Tensor<E>,
}

impl<E: Element> RivalryMaps<E> {
    /// `(file stem, map)` pairs in a fixed order, for export.
    pub fn named(&self) -> [(&'static str, &Tensor<E>); 8] {
        [
            ("error_left", &self.error_left),
            ("error_right", &self.error_right),
            ("prior_left", &self.prior_left),
            ("prior_right", &self.prior_right),
            ("prior_norm_left", &self.prior_norm_left),
            ("prior_norm_right", &self.prior_norm_right),
            ("likelihood_norm_left", &self.likelihood_norm_left),
            ("likelihood_norm_right", &self.likelihood_norm_right),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;
    use crate::tensor::{init, Tape};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn map(v: Vec<f64>, h: usize, w: usize) -> Tensor<f64> {
        Tensor::new(&[1, 1, h, w], v).unwrap()
    }

    #[test]
    fn error_map_values() {
        let tape = Tape::<f64>::new();
        let a = Tensor::full(&[1, 3, 2, 2], 0.4);
        let mut b = a.clone();
        b.data_mut()[5] = 0.7; // channel 1, pixel (0, 1)
        let (va, vb) = (tape.constant(a.clone()), tape.constant(b));
        let e = residual_error_map(va, vb).unwrap().value();
        assert_eq!(e.shape(), &[1, 1, 2, 2]);
        for (i, &v) in e.data().iter().enumerate() {
            let expected = if i == 1 { 0.09 / 3.0 } else { 0.0 };
            assert!((v - expected).abs() < 1e-12);
        }
        let swapped = residual_error_map(vb, va).unwrap().value();
        assert_eq!(swapped, e);
        assert!(residual_error_map(va, va)
            .unwrap()
            .value()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn prior_normalization_values() {
        let tape = Tape::<f64>::new();
        let (l, r) = normalize_priors(
            tape.constant(map(vec![1.0; 4], 2, 2)),
            tape.constant(map(vec![3.0; 4], 2, 2)),
        )
        .unwrap();
        assert!(l.value().data().iter().all(|&v| (v - 0.25).abs() < 1e-8));
        assert!(r.value().data().iter().all(|&v| (v - 0.75).abs() < 1e-8));
        let (l, r) = normalize_priors(
            tape.constant(map(vec![2.5; 4], 2, 2)),
            tape.constant(map(vec![2.5; 4], 2, 2)),
        )
        .unwrap();
        assert!(l.value().data().iter().chain(r.value().data()).all(|&v| v == 0.5));
        let (l, r) = normalize_priors(
            tape.constant(map(vec![0.0; 4], 2, 2)),
            tape.constant(map(vec![0.0; 4], 2, 2)),
        )
        .unwrap();
        assert!(l.value().data().iter().chain(r.value().data()).all(|&v| v == 0.5));
    }

    #[test]
    fn likelihoods_are_cross_assigned() {
        let tape = Tape::<f64>::new();
        let (l, r) = normalize_likelihoods(
            tape.constant(map(vec![0.2; 4], 2, 2)),
            tape.constant(map(vec![0.6; 4], 2, 2)),
        )
        .unwrap();
        assert!(l.value().data().iter().all(|&v| (v - 0.75).abs() < 1e-8));
        assert!(r.value().data().iter().all(|&v| (v - 0.25).abs() < 1e-8));
    }

    #[test]
    fn prior_map_shapes_and_uniformity() {
        let gen = PriorGenerator::new();
        let mut store = ParamStore::<f64>::new();
        gen.register(&mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let tape = Tape::new();
        let f = Forward::new(&tape, &store, Mode::Eval);
        let zero = tape.constant(Tensor::zeros(&[1, 192, 4, 4]));
        let p = gen.prior_map(&f, zero, 64, 64).unwrap().value();
        assert_eq!(p.shape(), &[1, 1, 64, 64]);
        let first = p.data()[0];
        assert!(first > 0.0);
        assert!(p.data().iter().all(|&v| (v - first).abs() < 1e-15));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let feats = tape.constant(init::normal(&[2, 192, 2, 3], 3.0, &mut rng));
        let p = gen.prior_map(&f, feats, 32, 48).unwrap().value();
        assert_eq!(p.shape(), &[2, 1, 32, 48]);
        assert!(p.data().iter().all(|&v| v >= 0.0));
    }

    proptest! {
        #[test]
        fn partition_of_unity_and_view_swap(
            a in prop::collection::vec(0.0f64..10.0, 6),
            b in prop::collection::vec(0.0f64..10.0, 6),
            scale in -12i32..2,
        ) {
            let s = 10f64.powi(scale);
            let a: Vec<f64> = a.into_iter().map(|v| v * s).collect();
            let b: Vec<f64> = b.into_iter().map(|v| v * s).collect();
            let tape = Tape::<f64>::new();
            let (va, vb) = (tape.constant(map(a, 2, 3)), tape.constant(map(b, 2, 3)));
            let (pl, pr) = normalize_priors(va, vb).unwrap();
            let (ll, lr) = normalize_likelihoods(va, vb).unwrap();
            for (x, y) in pl.value().data().iter().zip(pr.value().data()) {
                prop_assert!((x + y - 1.0).abs() < 1e-5);
                prop_assert!(*x >= 0.0 && *y >= 0.0);
            }
            for (x, y) in ll.value().data().iter().zip(lr.value().data()) {
                prop_assert!((x + y - 1.0).abs() < 1e-5);
            }
            let (pl2, pr2) = normalize_priors(vb, va).unwrap();
            prop_assert_eq!(pl2.value(), pr.value());
            prop_assert_eq!(pr2.value(), pl.value());
            let (ll2, lr2) = normalize_likelihoods(vb, va).unwrap();
            prop_assert_eq!(ll2.value(), lr.value());
            prop_assert_eq!(lr2.value(), ll.value());
        }

        #[test]
        fn likelihood_decreases_with_own_error(e in 0.0f64..5.0, other in 0.01f64..5.0, bump in 0.001f64..1.0) {
            let tape = Tape::<f64>::new();
            let r = tape.constant(map(vec![other], 1, 1));
            let (l1, _) = normalize_likelihoods(tape.constant(map(vec![e], 1, 1)), r).unwrap();
            let (l2, _) = normalize_likelihoods(tape.constant(map(vec![e + bump], 1, 1)), r).unwrap();
            prop_assert!(l2.item().unwrap() < l1.item().unwrap());
        }
    }
}
