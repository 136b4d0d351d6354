use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ManifestRecord, RecordKind};
use super::pnm::save_image;
use crate::error::{Error, Result};
use crate::image::{ImageTensor, StereoSample};

pub const BLUR_SIGMAS: [f64; 4] = [1.0, 2.0, 4.0, 8.0];
pub const NOISE_SIGMAS: [f64; 4] = [0.05, 0.1, 0.2, 0.4];
pub const MAX_LEVEL: u8 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distortion {
    Blur,
    Noise,
}

impl Distortion {
    pub fn tag(self) -> &'static str {
        match self {
            Distortion::Blur => "blur",
            Distortion::Noise => "noise",
        }
    }
}

/// Pseudo-MOS of a pair: `100 - 20 * mean(level_left, level_right)`.
pub fn pseudo_mos(level_left: u8, level_right: u8) -> f64 {
    100.0 - 20.0 * (level_left as f64 + level_right as f64) / 2.0
}

/// Separable Gaussian blur with radius `ceil(3 sigma)` and clamped borders.
pub fn gaussian_blur(image: &ImageTensor, sigma: f64) -> ImageTensor {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let (c, h, w) = (image.channels(), image.height(), image.width());
    let tap = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let horizontal = ImageTensor::from_fn(c, h, w, |ch, y, x| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, &wt)| wt * image.get(ch, y, tap(x as isize + k as isize - radius, w)) as f64)
            .sum::<f64>() as f32
    });
    ImageTensor::from_fn(c, h, w, |ch, y, x| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, &wt)| wt * horizontal.get(ch, tap(y as isize + k as isize - radius, h), x) as f64)
            .sum::<f64>() as f32
    })
}

/// Additive white Gaussian noise, clipped to [0, 1].
pub fn add_noise<R: Rng + ?Sized>(image: &ImageTensor, sigma: f64, rng: &mut R) -> ImageTensor {
    let normal = Normal::new(0.0, sigma).expect("finite noise sigma");
    let mut out = image.clone();
    out.data_mut()
        .iter_mut()
        .for_each(|v| *v = (*v as f64 + normal.sample(rng)).clamp(0.0, 1.0) as f32);
    out
}

/// Applies distortion level 0 (identity) to 4.
pub fn distort<R: Rng + ?Sized>(image: &ImageTensor, kind: Distortion, level: u8, rng: &mut R) -> Result<ImageTensor> {
    if level > MAX_LEVEL {
        return Err(Error::usage(format!(
            "distortion level must be 0-{MAX_LEVEL}, got {level}"
        )));
    }
    if level == 0 {
        return Ok(image.clone());
    }
    let i = level as usize - 1;
    Ok(match kind {
        Distortion::Blur => gaussian_blur(image, BLUR_SIGMAS[i]),
        Distortion::Noise => add_noise(image, NOISE_SIGMAS[i], rng),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub distortions: Vec<Distortion>,
    /// Same level on both views, levels 1-4, plus the pristine pair.
    pub symmetric: bool,
    /// Different levels on the two views.
    pub asymmetric: bool,
    /// Keep at most this many asymmetric variants per reference and
    /// distortion, chosen at random.
    pub max_asymmetric: Option<usize>,
    /// Number of simulated observer ratings per pair (0 for none).
    pub observers: usize,
    /// Spread of the simulated ratings around the pseudo-MOS.
    pub observer_sigma: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            distortions: vec![Distortion::Blur, Distortion::Noise],
            symmetric: true,
            asymmetric: true,
            max_asymmetric: None,
            observers: 8,
            observer_sigma: 5.0,
        }
    }
}

/// A distorted pair and how it was made.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthPair {
    pub reference: usize,
    pub distortion: Option<Distortion>,
    pub level_left: u8,
    pub level_right: u8,
    pub sample: StereoSample,
}

impl SynthPair {
    pub fn level_tag(&self) -> String {
        format!("{}/{}", self.level_left, self.level_right)
    }
}

/// Symmetric and asymmetric blur/noise variants of every reference pair,
/// labelled with the pseudo-MOS.
pub fn synthesize_distortions<R: Rng + ?Sized>(
    references: &[(ImageTensor, ImageTensor)],
    config: &SynthConfig,
    rng: &mut R,
) -> Result<Vec<SynthPair>> {
    if references.is_empty() {
        return Err(Error::usage("distortion synthesis needs at least one reference pair"));
    }
    let mut out = Vec::new();
    for (r, (left, right)) in references.iter().enumerate() {
        let mut levels: Vec<(Option<Distortion>, u8, u8)> = Vec::new();
        if config.symmetric {
            levels.push((None, 0, 0));
        }
        for &kind in &config.distortions {
            if config.symmetric {
                levels.extend((1..=MAX_LEVEL).map(|l| (Some(kind), l, l)));
            }
            if config.asymmetric {
                let mut asym: Vec<(Option<Distortion>, u8, u8)> = (0..=MAX_LEVEL)
                    .flat_map(|a| {
                        (0..=MAX_LEVEL)
                            .filter(move |&b| b != a)
                            .map(move |b| (Some(kind), a, b))
                    })
                    .collect();
                if let Some(max) = config.max_asymmetric {
                    while asym.len() > max {
                        asym.remove(rng.random_range(0..asym.len()));
                    }
                }
                levels.extend(asym);
            }
        }
        for (kind, a, b) in levels {
            let (l, rr) = match kind {
                None => (left.clone(), right.clone()),
                Some(k) => (distort(left, k, a, rng)?, distort(right, k, b, rng)?),
            };
            let mut sample = StereoSample::new(l, rr, pseudo_mos(a, b))?;
            if config.observers > 0 {
                let normal = Normal::new(0.0, config.observer_sigma).map_err(|e| Error::usage(e.to_string()))?;
                sample.observers = Some(
                    (0..config.observers)
                        .map(|_| sample.score + normal.sample(rng))
                        .collect(),
                );
            }
            out.push(SynthPair {
                reference: r,
                distortion: kind,
                level_left: a,
                level_right: b,
                sample,
            });
        }
    }
    Ok(out)
}

/// A smooth random texture and a copy shifted horizontally by `disparity`
/// pixels, as a stand-in pristine stereo pair.
pub fn procedural_reference<R: Rng + ?Sized>(
    height: usize,
    width: usize,
    disparity: usize,
    rng: &mut R,
) -> (ImageTensor, ImageTensor) {
    let waves: Vec<[f32; 5]> = (0..6)
        .map(|_| {
            [
                rng.random_range(0.02..0.25),
                rng.random_range(0.02..0.25),
                rng.random_range(0.0..std::f32::consts::TAU),
                rng.random_range(0.05..0.2),
                rng.random_range(0.0..3.0),
            ]
        })
        .collect();
    let base: [f32; 3] = std::array::from_fn(|_| rng.random_range(0.3..0.7));
    let full_w = width + disparity;
    let texture = ImageTensor::from_fn(3, height, full_w, |c, y, x| {
        let v: f32 = waves
            .iter()
            .map(|[fx, fy, ph, amp, cs]| amp * (fx * x as f32 + fy * y as f32 + ph + cs * c as f32).sin())
            .sum();
        (base[c] + v).clamp(0.0, 1.0)
    });
    let left = texture.crop(0, disparity, height, width).expect("in bounds");
    let right = texture.crop(0, 0, height, width).expect("in bounds");
    (left, right)
}

/// Writes every pair as `pairNNNN_left.ppm` / `pairNNNN_right.ppm` plus
/// `manifest.csv` into `dir`.
pub fn write_dataset(pairs: &[SynthPair], dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let dir = dir.as_ref();
    let mut manifest = DatasetManifest::default();
    for (i, p) in pairs.iter().enumerate() {
        let left = dir.join(format!("pair{i:04}_left.ppm"));
        let right = dir.join(format!("pair{i:04}_right.ppm"));
        save_image(&p.sample.left, &left)?;
        save_image(&p.sample.right, &right)?;
        manifest.records.push(ManifestRecord {
            left_path: left,
            right_path: Some(right),
            score: p.sample.score,
            kind: RecordKind::Stereo,
            distortion: p.distortion.map_or("none", Distortion::tag).to_owned(),
            level: p.level_tag(),
            observers: p.sample.observers.clone(),
        });
    }
    manifest.save(dir.join("manifest.csv"))?;
    Ok(manifest)
}
