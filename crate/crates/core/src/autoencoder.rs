//! Shared-weight convolutional auto-encoder.
//!
//! | layer          | output (256 input) | kernel/stride/pad |
//! |----------------|--------------------|-------------------|
//! | conv1 + GDN1   | 128 x 128 x 128    | 5/2/2             |
//! | conv2 + GDN2   | 128 x 64 x 64      | 5/2/2             |
//! | conv3 + GDN3   | 128 x 32 x 32      | 5/2/2             |
//! | conv4          | 192 x 16 x 16      | 5/2/2             |
//! | unconv1 + IGDN1| 128 x 32 x 32      | 5/2/2, out pad 1  |
//! | unconv2 + IGDN2| 128 x 64 x 64      | 5/2/2, out pad 1  |
//! | unconv3 + IGDN3| 128 x 128 x 128    | 5/2/2, out pad 1  |
//! | unconv4        | 3 x 256 x 256      | 5/2/2, out pad 1  |
//!
//! There is no quantization between encoder and decoder. Any input extent
//! divisible by 16 works.

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{Conv2d, ConvTranspose2d, Forward, Gdn};
use crate::tensor::{Element, ParamStore, Var};

pub const IMAGE_CHANNELS: usize = 3;
pub const HIDDEN_CHANNELS: usize = 128;
pub const FEATURE_CHANNELS: usize = 192;
/// Total down-sampling factor of the encoder.
pub const TOTAL_STRIDE: usize = 16;

#[derive(Clone, Debug)]
pub struct Autoencoder {
    encoder: Vec<Conv2d>,
    encoder_gdn: Vec<Gdn>,
    decoder: Vec<ConvTranspose2d>,
    decoder_igdn: Vec<Gdn>,
}

impl Default for Autoencoder {
    fn default() -> Self {
        Self::new()
    }
}

impl Autoencoder {
    pub fn new() -> Self {
        let enc_io = [
            (IMAGE_CHANNELS, HIDDEN_CHANNELS),
            (HIDDEN_CHANNELS, HIDDEN_CHANNELS),
            (HIDDEN_CHANNELS, HIDDEN_CHANNELS),
            (HIDDEN_CHANNELS, FEATURE_CHANNELS),
        ];
        let dec_io = [
            (FEATURE_CHANNELS, HIDDEN_CHANNELS),
            (HIDDEN_CHANNELS, HIDDEN_CHANNELS),
            (HIDDEN_CHANNELS, HIDDEN_CHANNELS),
            (HIDDEN_CHANNELS, IMAGE_CHANNELS),
        ];
        Self {
            encoder: enc_io
                .iter()
                .enumerate()
                .map(|(i, &(ci, co))| Conv2d::new(&format!("enc.conv{}", i + 1), ci, co, 5, 2, 2))
                .collect(),
            encoder_gdn: (1..=3)
                .map(|i| Gdn::new(&format!("enc.gdn{i}"), HIDDEN_CHANNELS, false))
                .collect(),
            decoder: dec_io
                .iter()
                .enumerate()
                .map(|(i, &(ci, co))| ConvTranspose2d::new(&format!("dec.unconv{}", i + 1), ci, co, 5, 2, 2, 1))
                .collect(),
            decoder_igdn: (1..=3)
                .map(|i| Gdn::new(&format!("dec.igdn{i}"), HIDDEN_CHANNELS, true))
                .collect(),
        }
    }

    pub fn register<E: Element, R: Rng + ?Sized>(&self, store: &mut ParamStore<E>, rng: &mut R) -> Result<()> {
        for conv in &self.encoder {
            conv.register(store, rng)?;
        }
        for g in self.encoder_gdn.iter().chain(&self.decoder_igdn) {
            g.register(store)?;
        }
        for deconv in &self.decoder {
            deconv.register(store, rng)?;
        }
        Ok(())
    }

    pub fn gdn_layers(&self) -> impl Iterator<Item = &Gdn> {
        self.encoder_gdn.iter().chain(&self.decoder_igdn)
    }

    /// Per-layer `(name, input C x H x W, output C x H x W)` for a given input.
    pub fn layer_shapes(&self, height: usize, width: usize) -> Vec<(String, [usize; 3], [usize; 3])> {
        let mut rows = Vec::new();
        let (mut c, mut h, mut w) = (IMAGE_CHANNELS, height, width);
        for conv in &self.encoder {
            let out = [conv.out_channels, conv.output_extent(h), conv.output_extent(w)];
            rows.push((conv.name.clone(), [c, h, w], out));
            [c, h, w] = out;
        }
        for deconv in &self.decoder {
            let out = [deconv.out_channels, deconv.output_extent(h), deconv.output_extent(w)];
            rows.push((deconv.name.clone(), [c, h, w], out));
            [c, h, w] = out;
        }
        rows
    }

    /// N x 3 x H x W images to N x 192 x H/16 x W/16 features.
    pub fn encode<'t, E: Element>(&self, f: &Forward<'t, '_, E>, images: Var<'t, E>) -> Result<Var<'t, E>> {
        let shape = images.shape();
        match shape.as_slice() {
            &[_, c, h, w]
                if c == IMAGE_CHANNELS && h % TOTAL_STRIDE == 0 && w % TOTAL_STRIDE == 0 && h > 0 && w > 0 => {}
            s => {
                return Err(Error::dim(format!(
                    "encoder needs N x 3 x H x W with H, W divisible by 16, got {s:?}"
                )))
            }
        }
        let mut h = images;
        for (i, conv) in self.encoder.iter().enumerate() {
            h = conv.forward(f, h)?;
            if let Some(g) = self.encoder_gdn.get(i) {
                h = g.forward(f, h)?;
            }
        }
        Ok(h)
    }

    /// N x 192 x h x w features to N x 3 x 16h x 16w reconstructions (unclamped).
    pub fn decode<'t, E: Element>(&self, f: &Forward<'t, '_, E>, features: Var<'t, E>) -> Result<Var<'t, E>> {
        let shape = features.shape();
        match shape.as_slice() {
            &[_, FEATURE_CHANNELS, h, w] if h > 0 && w > 0 => {}
            s => return Err(Error::dim(format!("decoder needs N x 192 x h x w, got {s:?}"))),
        }
        let mut h = features;
        for (i, deconv) in self.decoder.iter().enumerate() {
            h = deconv.forward(f, h)?;
            if let Some(g) = self.decoder_igdn.get(i) {
                h = g.forward(f, h)?;
            }
        }
        Ok(h)
    }

    /// Returns `(features, reconstruction)`.
    pub fn reconstruct<'t, E: Element>(
        &self,
        f: &Forward<'t, '_, E>,
        images: Var<'t, E>,
    ) -> Result<(Var<'t, E>, Var<'t, E>)> {
        let z = self.encode(f, images)?;
        let recon = self.decode(f, z)?;
        Ok((z, recon))
    }
}

/// Mean squared reconstruction error over every pixel, channel and batch item.
pub fn reconstruction_loss<'t, E: Element>(reconstructed: Var<'t, E>, input: Var<'t, E>) -> Result<Var<'t, E>> {
    reconstructed.mse(input)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;
    use crate::tensor::{Tape, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> (Autoencoder, ParamStore<f32>) {
        let ae = Autoencoder::new();
        let mut store = ParamStore::new();
        ae.register(&mut store, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        (ae, store)
    }

    #[test]
    fn layer_table_at_256() {
        let (ae, _) = model();
        let rows = ae.layer_shapes(256, 256);
        let outs: Vec<[usize; 3]> = rows.iter().map(|r| r.2).collect();
        assert_eq!(
            outs,
            vec![
                [128, 128, 128],
                [128, 64, 64],
                [128, 32, 32],
                [192, 16, 16],
                [128, 32, 32],
                [128, 64, 64],
                [128, 128, 128],
                [3, 256, 256],
            ]
        );
    }

    #[test]
    fn test_profile_shapes_and_round_trip() {
        let (ae, store) = model();
        let tape = Tape::new();
        let f = Forward::new(&tape, &store, Mode::Eval);
        let x = tape.constant(Tensor::full(&[2, 3, 64, 64], 0.5));
        let (z, recon) = ae.reconstruct(&f, x).unwrap();
        assert_eq!(z.shape(), vec![2, 192, 4, 4]);
        assert_eq!(recon.shape(), vec![2, 3, 64, 64]);
    }

    #[test]
    fn zero_image_with_zero_biases_encodes_to_zero() {
        let (ae, store) = model();
        let tape = Tape::new();
        let f = Forward::new(&tape, &store, Mode::Eval);
        let z = ae.encode(&f, tape.constant(Tensor::zeros(&[1, 3, 32, 32]))).unwrap();
        assert!(z.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn indivisible_extent_is_rejected() {
        let (ae, store) = model();
        let tape = Tape::new();
        let f = Forward::new(&tape, &store, Mode::Eval);
        let err = ae
            .encode(&f, tape.constant(Tensor::zeros(&[1, 3, 40, 32])))
            .unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
        let err = ae
            .decode(&f, tape.constant(Tensor::zeros(&[1, 128, 4, 4])))
            .unwrap_err();
        assert!(matches!(err, Error::Dimension(_)));
    }

    #[test]
    fn reconstruction_loss_values() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::full(&[2, 3, 4, 4], 0.5));
        let b = tape.constant(Tensor::full(&[2, 3, 4, 4], 0.25));
        assert_eq!(reconstruction_loss(b, a).unwrap().item().unwrap(), 0.0625);
        assert_eq!(reconstruction_loss(a, a).unwrap().item().unwrap(), 0.0);
        // duplicating the batch keeps the mean
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Tensor<f64> = crate::tensor::init::normal(&[2, 3, 4, 4], 1.0, &mut rng);
        let y: Tensor<f64> = crate::tensor::init::normal(&[2, 3, 4, 4], 1.0, &mut rng);
        let (xv, yv) = (tape.constant(x), tape.constant(y));
        let single = reconstruction_loss(xv, yv).unwrap().item().unwrap();
        let xx = Var::concat_batch(&[xv, xv]).unwrap();
        let yy = Var::concat_batch(&[yv, yv]).unwrap();
        let double = reconstruction_loss(xx, yy).unwrap().item().unwrap();
        assert!((single - double).abs() < 1e-12);
    }

    #[test]
    fn siamese_views_encode_identically() {
        let (ae, store) = model();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let img: Tensor<f32> = Tensor::from_fn(&[1, 3, 32, 32], |_| rng.random::<f32>());
        let tape = Tape::new();
        let f = Forward::new(&tape, &store, Mode::Eval);
        let v = tape.constant(img);
        let both = Var::concat_batch(&[v, v]).unwrap();
        let z = ae.encode(&f, both).unwrap().value();
        let half = z.len() / 2;
        assert_eq!(z.data()[..half], z.data()[half..]);
    }
}
