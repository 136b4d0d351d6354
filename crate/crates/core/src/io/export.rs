use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pnm::{encode_pgm, write_file};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MapScaling {
    /// Values are taken as lying in [0, 1].
    Unit,
    /// The map's own minimum and maximum span the gray range.
    MinMax,
}

impl std::str::FromStr for MapScaling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unit" => Ok(MapScaling::Unit),
            "minmax" => Ok(MapScaling::MinMax),
            _ => Err(Error::usage(format!("map scaling must be unit or minmax, got {s:?}"))),
        }
    }
}

/// Quantizes a single-channel map (1 x H x W or 1 x 1 x H x W) to gray bytes.
pub fn quantize_map(map: &Tensor<f32>, scaling: MapScaling) -> Result<(usize, usize, Vec<u8>)> {
    let (h, w) = match map.shape() {
        [1, h, w] | [1, 1, h, w] => (*h, *w),
        s => return Err(Error::dim(format!("map must be 1 x H x W, got {s:?}"))),
    };
    if !map.all_finite() {
        return Err(Error::numeric("map contains non-finite values"));
    }
    let data = map.data();
    let pixels = match scaling {
        MapScaling::Unit => data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect(),
        MapScaling::MinMax => {
            let lo = data.iter().cloned().fold(f32::INFINITY, f32::min);
            let hi = data.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            if hi > lo {
                let span = (hi - lo) as f64;
                data.iter()
                    .map(|&v| ((v - lo) as f64 / span * 255.0).round() as u8)
                    .collect()
            } else {
                vec![128; data.len()]
            }
        }
    };
    Ok((h, w, pixels))
}

/// Writes a single-channel map as an 8-bit PGM.
pub fn export_map(map: &Tensor<f32>, path: impl AsRef<Path>, scaling: MapScaling) -> Result<()> {
    let (h, w, pixels) = quantize_map(map, scaling)?;
    write_file(path.as_ref(), &encode_pgm(h, w, &pixels)?)
}
