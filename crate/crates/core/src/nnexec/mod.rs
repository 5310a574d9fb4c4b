//! Inference-only CNN executor for the residual U-Net generator.
//!
//! Layers run on `(channels, height, width)` tensors in `f32`. A graph is an
//! ordered list of layers; each consumes the previous output, and additive
//! skips name an earlier layer (or the graph input) explicitly.

mod bundle;
mod graph;
mod layers;

pub use bundle::{decode_bundle, encode_bundle, load_bundle, save_bundle, BUNDLE_MAGIC};
pub use graph::{
    build_generator, generator_forward, GeneratorConfig, GraphMeta, ModelGraph, Variant, WeightInit,
};
pub use layers::{layer_forward, Activation, LayerSpec, Source, Weights4, BN_EPS, LEAKY_SLOPE};

use crate::error::{Error, Result};
use crate::image::Image;

/// Dense `(C, H, W)` feature map, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::InvalidArgument(format!(
                "{} values for a {channels}x{height}x{width} tensor",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite tensor value".into()));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_image(img: &Image) -> Self {
        Self {
            channels: 1,
            height: img.height(),
            width: img.width(),
            data: img.data().to_vec(),
        }
    }

    /// Single-channel tensor back to an image.
    pub fn to_image(&self) -> Result<Image> {
        if self.channels != 1 {
            return Err(Error::InvalidArgument(format!(
                "expected a single-channel tensor, got {} channels",
                self.channels
            )));
        }
        Image::new(self.height, self.width, self.data.clone())
    }

    /// `(C, H, W)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
