use super::patches::{extract_patches, PatchGrid};
use crate::error::{Error, Result};
use crate::image::{ImageTensor, StereoSample};
use crate::layers::{Forward, Mode};
use crate::model::PadNet;
use crate::regressor::LabelScale;
use crate::rivalry::RivalryMaps;
use crate::tensor::{exec, ParamStore, Tape};

/// Score of one patch-sized pair, in score units.
pub fn score_patch(net: &PadNet, store: &ParamStore<f32>, pair: &StereoSample) -> Result<f64> {
    let labels = LabelScale::read(store)?;
    let left = ImageTensor::batch::<f32>(&[&pair.left])?;
    let right = ImageTensor::batch::<f32>(&[&pair.right])?;
    let tape = Tape::new();
    let f = Forward::new(&tape, store, Mode::Eval);
    let out = net.forward(&f, tape.constant(left), tape.constant(right))?;
    Ok(labels.to_score(out.prediction.item()? as f64))
}

/// Per-patch scores in grid order.
pub fn patch_scores(
    net: &PadNet,
    store: &ParamStore<f32>,
    sample: &StereoSample,
    grid: &PatchGrid,
) -> Result<Vec<f64>> {
    let patches = extract_patches(sample, grid)?;
    exec::map_indexed(patches.len(), |i| score_patch(net, store, &patches[i]))
        .into_iter()
        .collect()
}

/// Mean of the per-patch scores over the grid.
pub fn predict_quality(net: &PadNet, store: &ParamStore<f32>, sample: &StereoSample, grid: &PatchGrid) -> Result<f64> {
    let scores = patch_scores(net, store, sample, grid)?;
    if scores.is_empty() {
        return Err(Error::usage("patch grid is empty"));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Scores of many samples, each on its own grid.
pub fn predict_many(
    net: &PadNet,
    store: &ParamStore<f32>,
    samples: &[StereoSample],
    patch: usize,
    stride_h: usize,
    stride_w: usize,
) -> Result<Vec<f64>> {
    samples
        .iter()
        .map(|s| {
            let grid = PatchGrid::new(s.height(), s.width(), patch, stride_h, stride_w)?;
            predict_quality(net, store, s, &grid)
        })
        .collect()
}

/// Rivalry maps of the largest centered crop whose sides are multiples of 16.
pub fn rivalry_maps(net: &PadNet, store: &ParamStore<f32>, sample: &StereoSample) -> Result<RivalryMaps<f32>> {
    let stride = crate::autoencoder::TOTAL_STRIDE;
    let (h, w) = (sample.height() / stride * stride, sample.width() / stride * stride);
    if h == 0 || w == 0 {
        return Err(Error::usage(format!("image must be at least {stride}x{stride}")));
    }
    let (top, left) = ((sample.height() - h) / 2, (sample.width() - w) / 2);
    let l = ImageTensor::batch::<f32>(&[&sample.left.crop(top, left, h, w)?])?;
    let r = ImageTensor::batch::<f32>(&[&sample.right.crop(top, left, h, w)?])?;
    let tape = Tape::new();
    let f = Forward::new(&tape, store, Mode::Eval);
    let (bundle, _, _) = net.rivalry(&f, tape.constant(l), tape.constant(r))?;
    Ok(bundle.values())
}
