use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageTensor, StereoSample};

/// Top-left offsets of overlapping square patches covering an image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch: usize,
    pub stride_w: usize,
    pub stride_h: usize,
    /// `(top, left)` pairs, row-major.
    pub offsets: Vec<(usize, usize)>,
}

/// `0, stride, 2 stride, ...` below `extent - patch`, then `extent - patch`.
pub fn axis_offsets(extent: usize, patch: usize, stride: usize) -> Result<Vec<usize>> {
    if patch == 0 || stride == 0 {
        return Err(Error::usage("patch size and stride must be positive"));
    }
    if extent < patch {
        return Err(Error::usage(format!(
            "image extent {extent} is smaller than patch {patch}"
        )));
    }
    let last = extent - patch;
    let mut offsets: Vec<usize> = (0..=last).step_by(stride).collect();
    if offsets.last() != Some(&last) {
        offsets.push(last);
    }
    Ok(offsets)
}

impl PatchGrid {
    pub fn new(height: usize, width: usize, patch: usize, stride_h: usize, stride_w: usize) -> Result<Self> {
        let rows = axis_offsets(height, patch, stride_h)?;
        let cols = axis_offsets(width, patch, stride_w)?;
        let offsets = rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect();
        Ok(Self {
            patch,
            stride_w,
            stride_h,
            offsets,
        })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }
}

/// Aligned sub-pairs at every grid offset; each keeps the whole-image label.
pub fn extract_patches(sample: &StereoSample, grid: &PatchGrid) -> Result<Vec<StereoSample>> {
    grid.offsets
        .iter()
        .map(|&(top, left)| crop_pair(sample, top, left, grid.patch))
        .collect()
}

fn crop_pair(sample: &StereoSample, top: usize, left: usize, size: usize) -> Result<StereoSample> {
    Ok(StereoSample {
        left: sample.left.crop(top, left, size, size)?,
        right: sample.right.crop(top, left, size, size)?,
        score: sample.score,
        observers: sample.observers.clone(),
    })
}

/// Which random transforms the training loops apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub crop: bool,
    pub hflip: bool,
    pub vflip: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            crop: true,
            hflip: true,
            vflip: true,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            crop: false,
            hflip: false,
            vflip: false,
        }
    }
}

/// One concrete crop-and-flip, applied identically to both views.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Transform {
    pub top: usize,
    pub left: usize,
    pub size: usize,
    pub hflip: bool,
    pub vflip: bool,
}

impl Transform {
    /// Draws a transform for a `height x width` source. Without random
    /// cropping the patch is taken at `fallback`.
    pub fn sample<R: Rng + ?Sized>(
        height: usize,
        width: usize,
        size: usize,
        fallback: (usize, usize),
        config: &AugmentConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if height < size || width < size {
            return Err(Error::usage(format!(
                "{height}x{width} source is smaller than patch {size}"
            )));
        }
        let (top, left) = if config.crop {
            (rng.random_range(0..=height - size), rng.random_range(0..=width - size))
        } else {
            fallback
        };
        let hflip = config.hflip && rng.random_bool(0.5);
        let vflip = config.vflip && rng.random_bool(0.5);
        Ok(Self {
            top,
            left,
            size,
            hflip,
            vflip,
        })
    }

    pub fn apply(&self, image: &ImageTensor) -> Result<ImageTensor> {
        let mut out = image.crop(self.top, self.left, self.size, self.size)?;
        if self.hflip {
            out = out.flip_horizontal();
        }
        if self.vflip {
            out = out.flip_vertical();
        }
        Ok(out)
    }

    pub fn apply_pair(&self, sample: &StereoSample) -> Result<StereoSample> {
        Ok(StereoSample {
            left: self.apply(&sample.left)?,
            right: self.apply(&sample.right)?,
            score: sample.score,
            observers: sample.observers.clone(),
        })
    }
}

/// Random crop and flips of a stereo pair; label unchanged.
pub fn augment<R: Rng + ?Sized>(
    sample: &StereoSample,
    size: usize,
    config: &AugmentConfig,
    rng: &mut R,
) -> Result<StereoSample> {
    Transform::sample(sample.height(), sample.width(), size, (0, 0), config, rng)?.apply_pair(sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair(h: usize, w: usize) -> StereoSample {
        let l = ImageTensor::from_fn(3, h, w, |c, y, x| ((c * 7 + y * 3 + x) % 17) as f32 / 17.0);
        let r = ImageTensor::from_fn(3, h, w, |c, y, x| ((c * 5 + y + x * 2) % 13) as f32 / 13.0);
        StereoSample::new(l, r, 42.0).unwrap()
    }

    #[test]
    fn grid_offsets() {
        let g = PatchGrid::new(360, 640, 256, 104, 192).unwrap();
        assert_eq!(
            g.offsets,
            vec![(0, 0), (0, 192), (0, 384), (104, 0), (104, 192), (104, 384)]
        );
        assert_eq!(PatchGrid::new(256, 256, 256, 104, 192).unwrap().offsets, vec![(0, 0)]);
        assert_eq!(axis_offsets(300, 256, 192).unwrap(), vec![0, 44]);
        assert_eq!(axis_offsets(512, 256, 128).unwrap(), vec![0, 128, 256]);
        assert!(matches!(PatchGrid::new(200, 640, 256, 104, 192), Err(Error::Usage(_))));
    }

    #[test]
    fn patches_share_label_and_offsets() {
        let s = pair(80, 100);
        let g = PatchGrid::new(80, 100, 64, 26, 48).unwrap();
        let patches = extract_patches(&s, &g).unwrap();
        assert_eq!(patches.len(), g.len());
        for (p, &(top, left)) in patches.iter().zip(&g.offsets) {
            assert_eq!(p.score, 42.0);
            assert_eq!(p.left.get(1, 3, 5), s.left.get(1, top + 3, left + 5));
            assert_eq!(p.right.get(2, 63, 0), s.right.get(2, top + 63, left));
        }
    }

    #[test]
    fn identity_and_involution() {
        let s = pair(16, 16);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(augment(&s, 16, &AugmentConfig::none(), &mut rng).unwrap(), s);
        let t = Transform {
            top: 0,
            left: 0,
            size: 16,
            hflip: true,
            vflip: false,
        };
        assert_eq!(t.apply_pair(&t.apply_pair(&s).unwrap()).unwrap(), s);
    }

    #[test]
    fn both_views_share_the_transform() {
        let (h, w, d) = (24, 40, 3usize);
        let base = ImageTensor::from_fn(3, h, w + d, |c, y, x| ((c * 31 + y * 17 + x * 7) % 97) as f32 / 97.0);
        let left = base.crop(0, d, h, w).unwrap();
        let right = base.crop(0, 0, h, w).unwrap();
        // right(y, x + d) == left(y, x)
        let s = StereoSample::new(left, right, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = AugmentConfig::default();
        for _ in 0..20 {
            let t = Transform::sample(h, w, 16, (0, 0), &cfg, &mut rng).unwrap();
            let out = t.apply_pair(&s).unwrap();
            let shift = if t.hflip { -(d as isize) } else { d as isize };
            for y in 0..16 {
                for x in 0..16isize {
                    let xr = x + shift;
                    if (0..16).contains(&xr) {
                        assert_eq!(out.left.get(0, y, x as usize), out.right.get(0, y, xr as usize));
                    }
                }
            }
        }
    }
}
