//! Per-pixel color probability maps — the network's output.
//!
//! Colors are 1-based everywhere in the public API: color 1 is background,
//! colors 2..=C are foreground. Internally plane `c - 1` stores color c.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::tensor::Tensor;

/// `colors` planes of `height x width` probabilities; each pixel's values
/// sum to 1 when produced by the network's softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorProbMap {
    colors: u8,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ColorProbMap {
    pub fn new(colors: u8, height: usize, width: usize, data: Vec<f64>) -> Result<ColorProbMap, String> {
        if colors < 2 {
            return Err(format!("need at least 2 colors, got {colors}"));
        }
        if data.len() != colors as usize * height * width {
            return Err(format!(
                "probability data length {} does not match {colors}x{height}x{width}",
                data.len()
            ));
        }
        Ok(ColorProbMap {
            colors,
            height,
            width,
            data,
        })
    }

    /// Wrap a `[c,h,w]` tensor (e.g. the softmax output node's values).
    pub fn from_tensor(t: &Tensor) -> Result<ColorProbMap, String> {
        let (c, h, w) = t.dims3().map_err(|e| format!("{e}"))?;
        if c > u8::MAX as usize {
            return Err(format!("{c} colors exceed the supported maximum of 255"));
        }
        ColorProbMap::new(c as u8, h, w, t.data().to_vec())
    }

    pub fn colors(&self) -> u8 {
        self.colors
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Probability of `color` (1-based) at linear pixel index `p`.
    pub fn prob(&self, color: u8, p: u32) -> f64 {
        debug_assert!(color >= 1 && color <= self.colors);
        self.data[(color as usize - 1) * self.num_pixels() + p as usize]
    }

    /// The plane of one color (1-based).
    pub fn plane(&self, color: u8) -> &[f64] {
        let hw = self.num_pixels();
        &self.data[(color as usize - 1) * hw..color as usize * hw]
    }

    /// Checks this is a genuine probability map: finite, non-negative, each
    /// pixel summing to 1 within `tol`. Inference entry points call this;
    /// the loss does not (finite differences probe off-simplex points).
    pub fn validate(&self, tol: f64) -> Result<(), String> {
        let hw = self.num_pixels();
        for p in 0..hw {
            let mut sum = 0.0;
            for c in 0..self.colors as usize {
                let v = self.data[c * hw + p];
                if !v.is_finite() || v < 0.0 {
                    return Err(format!("probability {v} at pixel {p}, color {}", c + 1));
                }
                sum += v;
            }
            if (sum - 1.0).abs() > tol {
                return Err(format!("pixel {p} probabilities sum to {sum}"));
            }
        }
        Ok(())
    }
}
