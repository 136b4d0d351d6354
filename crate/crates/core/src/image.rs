//! Three-channel images and the stereo samples built from them.

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// C x H x W image with values nominally in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    tensor: Tensor<f32>,
}

impl ImageTensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        Ok(Self {
            tensor: Tensor::new(&[channels, height, width], data)?,
        })
    }

    pub fn from_tensor(tensor: Tensor<f32>) -> Result<Self> {
        match tensor.shape() {
            [_, _, _] => Ok(Self { tensor }),
            [1, c, h, w] => {
                let (c, h, w) = (*c, *h, *w);
                Ok(Self {
                    tensor: tensor.reshape(&[c, h, w])?,
                })
            }
            s => Err(Error::dim(format!("image tensor must be C x H x W, got {s:?}"))),
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self {
            tensor: Tensor::full(&[channels, height, width], value),
        }
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            tensor: Tensor::from_parts(vec![channels, height, width], data),
        }
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn data(&self) -> &[f32] {
        self.tensor.data()
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        self.tensor.data_mut()
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.tensor
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data()[(c * self.height() + y) * self.width() + x]
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height() || left + width > self.width() {
            return Err(Error::usage(format!(
                "crop {height}x{width} at ({top},{left}) exceeds {}x{}",
                self.height(),
                self.width()
            )));
        }
        Ok(Self::from_fn(self.channels(), height, width, |c, y, x| {
            self.get(c, top + y, left + x)
        }))
    }

    pub fn flip_horizontal(&self) -> Self {
        let w = self.width();
        Self::from_fn(self.channels(), self.height(), w, |c, y, x| self.get(c, y, w - 1 - x))
    }

    pub fn flip_vertical(&self) -> Self {
        let h = self.height();
        Self::from_fn(self.channels(), h, self.width(), |c, y, x| self.get(c, h - 1 - y, x))
    }

    pub fn clamped(&self) -> Self {
        Self {
            tensor: Tensor::from_fn(self.tensor.shape(), |i| self.data()[i].clamp(0.0, 1.0)),
        }
    }

    /// Stacks images into an N x C x H x W tensor of element type `E`.
    pub fn batch<E: Element>(images: &[&ImageTensor]) -> Result<Tensor<E>> {
        let first = images.first().ok_or_else(|| Error::usage("empty image batch"))?;
        let (c, h, w) = (first.channels(), first.height(), first.width());
        let mut data = Vec::with_capacity(images.len() * c * h * w);
        for img in images {
            if (img.channels(), img.height(), img.width()) != (c, h, w) {
                return Err(Error::dim("images in a batch must share their shape"));
            }
            data.extend(img.data().iter().map(|&v| E::of(v as f64)));
        }
        Tensor::new(&[images.len(), c, h, w], data)
    }

    /// Splits an N x C x H x W tensor back into images.
    pub fn unbatch<E: Element>(t: &Tensor<E>) -> Result<Vec<ImageTensor>> {
        let [n, c, h, w] = t.dims4()?;
        let size = c * h * w;
        (0..n)
            .map(|i| {
                let data = t.data()[i * size..(i + 1) * size]
                    .iter()
                    .map(|&v| v.f64() as f32)
                    .collect();
                ImageTensor::new(c, h, w, data)
            })
            .collect()
    }
}

/// A left/right pair with its subjective score.
#[derive(Clone, Debug, PartialEq)]
pub struct StereoSample {
    pub left: ImageTensor,
    pub right: ImageTensor,
    pub score: f64,
    /// Individual observer ratings, when available.
    pub observers: Option<Vec<f64>>,
}

impl StereoSample {
    pub fn new(left: ImageTensor, right: ImageTensor, score: f64) -> Result<Self> {
        if (left.channels(), left.height(), left.width()) != (right.channels(), right.height(), right.width()) {
            return Err(Error::dim("left and right views differ in shape"));
        }
        Ok(Self {
            left,
            right,
            score,
            observers: None,
        })
    }

    pub fn height(&self) -> usize {
        self.left.height()
    }

    pub fn width(&self) -> usize {
        self.left.width()
    }

    pub fn swapped(&self) -> Self {
        Self {
            left: self.right.clone(),
            right: self.left.clone(),
            score: self.score,
            observers: self.observers.clone(),
        }
    }
}

/// A single-view image with its score, used for 2-D regressor pretraining.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredImage {
    pub image: ImageTensor,
    pub score: f64,
}
