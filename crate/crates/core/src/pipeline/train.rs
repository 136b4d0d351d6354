use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::patches::{AugmentConfig, PatchGrid, Transform};
use super::schedule::LearningRates;
use crate::autoencoder::reconstruction_loss;
use crate::error::{Error, Result};
use crate::image::{ImageTensor, ScoredImage, StereoSample};
use crate::layers::{Forward, Mode};
use crate::model::{PadNet, ParamGroup};
use crate::regressor::{quality_loss, BackboneKind, LabelScale};
use crate::tensor::{AdamConfig, AdamState, ParamStore, Tape, Tensor};

/// Working resolution: patch size, default strides and batch size.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Profile {
    #[default]
    #[serde(rename = "256")]
    Full,
    #[serde(rename = "64")]
    Small,
}

impl Profile {
    pub fn patch(self) -> usize {
        match self {
            Profile::Full => 256,
            Profile::Small => 64,
        }
    }

    /// `(stride_h, stride_w)`; the small profile scales the full strides by 1/4.
    pub fn strides(self) -> (usize, usize) {
        match self {
            Profile::Full => (104, 192),
            Profile::Small => (26, 48),
        }
    }

    pub fn batch_size(self) -> usize {
        match self {
            Profile::Full => 2,
            Profile::Small => 8,
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "256" => Ok(Profile::Full),
            "64" => Ok(Profile::Small),
            _ => Err(Error::usage(format!("profile must be 256 or 64, got {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    #[serde(rename = "1")]
    Autoencoder,
    #[serde(rename = "2")]
    Regressor2d,
    #[serde(rename = "3")]
    Joint,
}

impl Stage {
    pub fn number(self) -> u8 {
        match self {
            Stage::Autoencoder => 1,
            Stage::Regressor2d => 2,
            Stage::Joint => 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub profile: Profile,
    pub epochs: usize,
    pub batch_size: usize,
    /// Optimizer steps per schedule epoch. `None` means one pass over the
    /// training patches.
    pub steps_per_epoch: Option<usize>,
    pub rates: LearningRates,
    pub adam: AdamConfig,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub stride_h: usize,
    pub stride_w: usize,
    /// Fraction of stereo samples used for joint training; the rest is held out.
    pub train_fraction: Option<f64>,
    pub backbone: BackboneKind,
}

impl TrainConfig {
    pub fn new(profile: Profile) -> Self {
        let (stride_h, stride_w) = profile.strides();
        Self {
            profile,
            epochs: 300,
            batch_size: profile.batch_size(),
            steps_per_epoch: None,
            rates: LearningRates::default(),
            adam: AdamConfig::default(),
            seed: 0,
            augment: AugmentConfig::default(),
            stride_h,
            stride_w,
            train_fraction: None,
            backbone: BackboneKind::default(),
        }
    }

    pub fn patch(&self) -> usize {
        self.profile.patch()
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.steps_per_epoch == Some(0) {
            return Err(Error::usage("epochs, batch size and steps per epoch must be positive"));
        }
        if let Some(f) = self.train_fraction {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::usage(format!("train fraction must be in (0, 1], got {f}")));
            }
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::new(Profile::Full)
    }
}

/// One optimizer step of the training trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub stage: u8,
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub learning_rates: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub trace: Vec<TraceRecord>,
    /// Indices of the samples trained on and held out, for joint training.
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

impl TrainReport {
    pub fn initial_loss(&self) -> Option<f64> {
        self.trace.first().map(|r| r.loss)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.trace.last().map(|r| r.loss)
    }

    /// The trace as newline-delimited JSON.
    pub fn to_json_lines(&self) -> String {
        self.trace
            .iter()
            .map(|r| serde_json::to_string(r).expect("trace records serialize") + "\n")
            .collect()
    }
}

/// Patch slots of one epoch: `(source index, (top, left))`.
fn patch_slots(sizes: &[(usize, usize)], cfg: &TrainConfig) -> Result<Vec<(usize, (usize, usize))>> {
    let mut slots = Vec::new();
    for (i, &(h, w)) in sizes.iter().enumerate() {
        let grid = PatchGrid::new(h, w, cfg.patch(), cfg.stride_h, cfg.stride_w)?;
        slots.extend(grid.offsets.into_iter().map(|o| (i, o)));
    }
    Ok(slots)
}

/// Draws shuffled batches of patch slots, reshuffling at each epoch boundary.
struct BatchSampler {
    slots: Vec<(usize, (usize, usize))>,
    cursor: usize,
    steps_per_epoch: usize,
}

impl BatchSampler {
    fn new(slots: Vec<(usize, (usize, usize))>, cfg: &TrainConfig) -> Self {
        let natural = slots.len().div_ceil(cfg.batch_size);
        Self {
            cursor: slots.len(),
            slots,
            steps_per_epoch: cfg.steps_per_epoch.unwrap_or(natural),
        }
    }

    fn next(&mut self, batch: usize, rng: &mut ChaCha8Rng) -> Vec<(usize, (usize, usize))> {
        (0..batch)
            .map(|_| {
                if self.cursor == self.slots.len() {
                    self.slots.shuffle(rng);
                    self.cursor = 0;
                }
                self.cursor += 1;
                self.slots[self.cursor - 1]
            })
            .collect()
    }
}

fn check_loss(loss: f64, stage: Stage, step: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::numeric(format!(
            "stage {} loss became {loss} at step {step}",
            stage.number()
        )))
    }
}

fn in_groups(groups: &[ParamGroup], name: &str) -> bool {
    ParamGroup::of(name).is_some_and(|g| groups.contains(&g))
}

/// Encoder-decoder pretraining on single images; touches only `enc.`/`dec.`.
pub fn pretrain_autoencoder(
    net: &PadNet,
    store: &mut ParamStore<f32>,
    images: &[ImageTensor],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::usage("autoencoder pretraining needs at least one image"));
    }
    let sizes: Vec<_> = images.iter().map(|i| (i.height(), i.width())).collect();
    let mut sampler = BatchSampler::new(patch_slots(&sizes, cfg)?, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(cfg.adam);
    let mut report = TrainReport::default();
    let total = cfg.epochs * sampler.steps_per_epoch;
    for step in 0..total {
        let epoch = step / sampler.steps_per_epoch;
        let lr = cfg.rates.pretrain_at(epoch);
        let batch = sampler
            .next(cfg.batch_size, &mut rng)
            .into_iter()
            .map(|(i, at)| {
                let img = &images[i];
                Transform::sample(img.height(), img.width(), cfg.patch(), at, &cfg.augment, &mut rng)?.apply(img)
            })
            .collect::<Result<Vec<_>>>()?;
        let x = ImageTensor::batch::<f32>(&batch.iter().collect::<Vec<_>>())?;

        store.zero_grad();
        let loss = {
            let tape = Tape::new();
            let f = Forward::new(&tape, store, Mode::Train);
            let input = tape.constant(x);
            let (_, recon) = net.autoencoder.reconstruct(&f, input)?;
            let loss = reconstruction_loss(recon, input)?;
            let value = loss.item()? as f64;
            check_loss(value, Stage::Autoencoder, step)?;
            let grads = tape.backward(loss)?;
            drop(f);
            grads.accumulate_into(store)?;
            value
        };
        adam.step(store, |name| in_groups(&[ParamGroup::Autoencoder], name).then_some(lr))?;
        report.trace.push(TraceRecord {
            stage: 1,
            step,
            epoch,
            loss,
            learning_rates: BTreeMap::from([("alpha".to_owned(), lr)]),
        });
        log::debug!("stage 1 step {step} loss {loss:.6e}");
    }
    store.zero_grad();
    Ok(report)
}

/// Regressor pretraining on scored single images; touches only `reg.`.
pub fn pretrain_regressor_2d(
    net: &PadNet,
    store: &mut ParamStore<f32>,
    data: &[ScoredImage],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::usage("regressor pretraining needs at least one scored image"));
    }
    let labels = LabelScale::fit(&data.iter().map(|d| d.score).collect::<Vec<_>>())?;
    labels.write(store)?;
    let sizes: Vec<_> = data.iter().map(|d| (d.image.height(), d.image.width())).collect();
    let mut sampler = BatchSampler::new(patch_slots(&sizes, cfg)?, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(cfg.adam);
    let mut report = TrainReport::default();
    let total = cfg.epochs * sampler.steps_per_epoch;
    for step in 0..total {
        let epoch = step / sampler.steps_per_epoch;
        let lr = cfg.rates.pretrain_at(epoch);
        let picks = sampler.next(cfg.batch_size, &mut rng);
        let mut batch = Vec::with_capacity(picks.len());
        let mut targets = Vec::with_capacity(picks.len());
        for (i, at) in picks {
            let d = &data[i];
            let t = Transform::sample(
                d.image.height(),
                d.image.width(),
                cfg.patch(),
                at,
                &cfg.augment,
                &mut rng,
            )?;
            batch.push(t.apply(&d.image)?);
            targets.push(labels.standardize(d.score) as f32);
        }
        let x = ImageTensor::batch::<f32>(&batch.iter().collect::<Vec<_>>())?;
        let y = Tensor::new(&[targets.len(), 1], targets)?;

        store.zero_grad();
        let (loss, stats) = {
            let tape = Tape::new();
            let f = Forward::new(&tape, store, Mode::Train);
            let pred = net.regressor.forward(&f, tape.constant(x))?;
            let loss = quality_loss(pred, tape.constant(y))?;
            let value = loss.item()? as f64;
            check_loss(value, Stage::Regressor2d, step)?;
            let grads = tape.backward(loss)?;
            let stats = f.into_stat_updates();
            grads.accumulate_into(store)?;
            (value, stats)
        };
        stats.apply(store)?;
        adam.step(store, |name| in_groups(&[ParamGroup::Regressor], name).then_some(lr))?;
        report.trace.push(TraceRecord {
            stage: 2,
            step,
            epoch,
            loss,
            learning_rates: BTreeMap::from([("alpha".to_owned(), lr)]),
        });
        log::debug!("stage 2 step {step} loss {loss:.6e}");
    }
    store.zero_grad();
    Ok(report)
}

/// Seeded shuffle of `0..n` split into `(train, test)`; `None` keeps everything
/// for training.
pub fn split_indices(n: usize, train_fraction: Option<f64>, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    match train_fraction {
        None => (idx, Vec::new()),
        Some(f) => {
            idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5b11_7000_0000));
            let n_train = ((n as f64 * f).round() as usize).clamp(1.min(n), n);
            let test = idx.split_off(n_train);
            (idx, test)
        }
    }
}

/// End-to-end training with group learning rates: `alpha1` on the
/// encoder-decoder, `alpha3 / 2` on the regressor, `alpha3` on prior
/// generation and fusion.
pub fn train_joint(
    net: &PadNet,
    store: &mut ParamStore<f32>,
    data: &[StereoSample],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::usage("joint training needs at least one stereo sample"));
    }
    let mut reference = ParamStore::<f32>::new();
    net.register(&mut reference, &mut ChaCha8Rng::seed_from_u64(0))?;
    for name in reference.names() {
        if !store.contains(name) {
            return Err(Error::usage(format!("joint training is missing weight `{name}`")));
        }
    }
    let (train_idx, test_idx) = split_indices(data.len(), cfg.train_fraction, cfg.seed);
    let train: Vec<&StereoSample> = train_idx.iter().map(|&i| &data[i]).collect();
    let labels = LabelScale::fit(&train.iter().map(|s| s.score).collect::<Vec<_>>())?;
    labels.write(store)?;

    let sizes: Vec<_> = train.iter().map(|s| (s.height(), s.width())).collect();
    let mut sampler = BatchSampler::new(patch_slots(&sizes, cfg)?, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut adam = AdamState::new(cfg.adam);
    let mut report = TrainReport {
        trace: Vec::new(),
        train_indices: train_idx.clone(),
        test_indices: test_idx,
    };
    let total = cfg.epochs * sampler.steps_per_epoch;
    for step in 0..total {
        let epoch = step / sampler.steps_per_epoch;
        let (a1, a2, a3) = (
            cfg.rates.alpha1_at(epoch),
            cfg.rates.alpha2_at(epoch),
            cfg.rates.alpha3_at(epoch),
        );
        let picks = sampler.next(cfg.batch_size, &mut rng);
        let mut pairs = Vec::with_capacity(picks.len());
        for (i, at) in picks {
            let s = train[i];
            let t = Transform::sample(s.height(), s.width(), cfg.patch(), at, &cfg.augment, &mut rng)?;
            pairs.push(t.apply_pair(s)?);
        }
        let left = ImageTensor::batch::<f32>(&pairs.iter().map(|p| &p.left).collect::<Vec<_>>())?;
        let right = ImageTensor::batch::<f32>(&pairs.iter().map(|p| &p.right).collect::<Vec<_>>())?;
        let targets: Vec<f32> = pairs.iter().map(|p| labels.standardize(p.score) as f32).collect();
        let y = Tensor::new(&[targets.len(), 1], targets)?;

        store.zero_grad();
        let (loss, stats) = {
            let tape = Tape::new();
            let f = Forward::new(&tape, store, Mode::Train);
            let out = net.forward(&f, tape.constant(left), tape.constant(right))?;
            let loss = quality_loss(out.prediction, tape.constant(y))?;
            let value = loss.item()? as f64;
            check_loss(value, Stage::Joint, step)?;
            let grads = tape.backward(loss)?;
            let stats = f.into_stat_updates();
            grads.accumulate_into(store)?;
            (value, stats)
        };
        stats.apply(store)?;
        adam.step(store, |name| match ParamGroup::of(name)? {
            ParamGroup::Autoencoder => Some(a1),
            ParamGroup::Regressor => Some(a2),
            ParamGroup::Fusion => Some(a3),
        })?;
        report.trace.push(TraceRecord {
            stage: 3,
            step,
            epoch,
            loss,
            learning_rates: BTreeMap::from([
                ("alpha1".to_owned(), a1),
                ("alpha2".to_owned(), a2),
                ("alpha3".to_owned(), a3),
            ]),
        });
        log::debug!("stage 3 step {step} loss {loss:.6e}");
    }
    store.zero_grad();
    Ok(report)
}
