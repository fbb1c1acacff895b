//! In-memory images: channel-major f64 planes with values in [0, 1].

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::tensor::Tensor;

/// `channels` planes of `height x width` f64 values, row-major per plane.
/// Grayscale images have one plane; RGB images three.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Image {
        Image {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn from_planes(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
    ) -> Result<Image, String> {
        if data.len() != channels * height * width {
            return Err(format!(
                "image data length {} does not match {channels}x{height}x{width}",
                data.len()
            ));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
        })
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, ch: usize, r: usize, c: usize) -> f64 {
        self.data[(ch * self.height + r) * self.width + c]
    }

    pub fn set(&mut self, ch: usize, r: usize, c: usize, v: f64) {
        self.data[(ch * self.height + r) * self.width + c] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// View as a `[channels, h, w]` tensor (network input).
    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_vec(&[self.channels, self.height, self.width], self.data.clone())
            .expect("image dims are consistent by construction")
    }
}
