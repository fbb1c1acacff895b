//! The coloring network: an hourglass of 3x3 convolutions with skip
//! connections, ending in a per-pixel softmax over colors.
//!
//! Layout for `depth = d`, `base_channels = b`:
//! * stem — conv3x3 (input → b), ReLU, at full resolution;
//! * encoder stage i = 1..d — 2x2 max-pool, conv3x3 (b·2^(i-1) → b·2^i), ReLU;
//! * decoder stage i = d..1 — transposed conv 2x2 stride 2 (halving the
//!   channels of its input at stage d, quartering below), ReLU, then
//!   concatenation with the matching encoder output, giving b·2^i channels;
//! * head — conv3x3 (2b → colors), channel softmax.
//!
//! With `use_batchnorm` every conv except the head is followed by a
//! per-image, per-channel spatial standardization with a learned gain and
//! shift (each image normalizes against its own statistics, so samples in a
//! batch never couple).
//!
//! Weights use He initialization (std = sqrt(2 / fan-in), fan-in counting
//! the effective contributors per output: ci·k² for convolutions, ci·k²/s²
//! for transposed ones); biases, shifts start at zero, gains at one.
//! Parameters are created, named, and drawn in declaration order, so a seed
//! pins every weight.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::fmath;
use crate::image::Image;
use crate::probmap::ColorProbMap;
use crate::rng::Rng;
use crate::tensor::tape::{NodeId, Tape};
use crate::tensor::Tensor;

pub const KERNEL_SIZE: usize = 3;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetConfig {
    pub input_channels: usize,
    pub colors: u8,
    /// Number of pooling stages; input sides must divide by 2^depth.
    pub depth: usize,
    /// Channels after the stem; doubles at every encoder stage.
    pub base_channels: usize,
    pub use_batchnorm: bool,
}

impl Default for NetConfig {
    fn default() -> NetConfig {
        NetConfig {
            input_channels: 1,
            colors: 9,
            depth: 3,
            base_channels: 8,
            use_batchnorm: false,
        }
    }
}

/// What one parameter tensor is for: weight shapes differ per kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ParamKind {
    ConvWeight { fan_in: usize },
    Bias,
    Gain,
    Shift,
}

struct ParamSpec {
    name: String,
    shape: Vec<usize>,
    kind: ParamKind,
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.input_channels == 0 {
            return Err(String::from("input_channels must be at least 1"));
        }
        if self.colors < 2 {
            return Err(format!("need at least 2 colors, got {}", self.colors));
        }
        if self.depth == 0 {
            return Err(String::from("depth must be at least 1"));
        }
        if self.base_channels == 0 {
            return Err(String::from("base_channels must be at least 1"));
        }
        Ok(())
    }

    /// Input sides must be a multiple of this.
    pub fn divisor(&self) -> usize {
        1 << self.depth
    }

    /// Side length of the square of input pixels that can influence one
    /// output pixel. Each conv3x3 adds 2 at the current sampling step; each
    /// pool adds 1 step then doubles the step; the 2x2-stride-2 upsampling
    /// maps one coarse pixel to a disjoint 2x2 block, adding nothing.
    pub fn receptive_field(&self) -> usize {
        let k = KERNEL_SIZE;
        let mut rf = 1 + (k - 1); // stem
        let mut step = 1;
        for _ in 0..self.depth {
            rf += step; // pool window extends one step
            step *= 2;
            rf += (k - 1) * step; // encoder conv at the new resolution
        }
        rf + (k - 1) // head conv back at full resolution
    }

    /// Channel count entering decoder stage `i` (counting d down to 1):
    /// the bottleneck at the top, concatenated features below.
    fn decoder_input_channels(&self, i: usize) -> usize {
        if i == self.depth {
            self.base_channels << self.depth
        } else {
            self.base_channels << (i + 1)
        }
    }

    fn param_specs(&self) -> Vec<ParamSpec> {
        let k = KERNEL_SIZE;
        let b = self.base_channels;
        let mut specs = Vec::new();
        let conv = |name: &str, co: usize, ci: usize, kh: usize, kw: usize, fan_in: usize, norm: bool, specs: &mut Vec<ParamSpec>| {
            specs.push(ParamSpec {
                name: format!("{name}.weight"),
                shape: vec![co, ci, kh, kw],
                kind: ParamKind::ConvWeight { fan_in },
            });
            specs.push(ParamSpec {
                name: format!("{name}.bias"),
                shape: vec![co],
                kind: ParamKind::Bias,
            });
            if norm {
                specs.push(ParamSpec {
                    name: format!("{name}.gain"),
                    shape: vec![co],
                    kind: ParamKind::Gain,
                });
                specs.push(ParamSpec {
                    name: format!("{name}.shift"),
                    shape: vec![co],
                    kind: ParamKind::Shift,
                });
            }
        };
        let bn = self.use_batchnorm;
        conv("stem", b, self.input_channels, k, k, self.input_channels * k * k, bn, &mut specs);
        for i in 1..=self.depth {
            let (ci, co) = (b << (i - 1), b << i);
            conv(&format!("down{i}"), co, ci, k, k, ci * k * k, bn, &mut specs);
        }
        for i in (1..=self.depth).rev() {
            let ci = self.decoder_input_channels(i);
            let co = b << (i - 1);
            // Transposed kernels are stored [ci, co, 2, 2]; stride 2 means
            // each output draws from ci·4/4 = ci inputs.
            specs.push(ParamSpec {
                name: format!("up{i}.weight"),
                shape: vec![ci, co, 2, 2],
                kind: ParamKind::ConvWeight { fan_in: ci },
            });
            specs.push(ParamSpec {
                name: format!("up{i}.bias"),
                shape: vec![co],
                kind: ParamKind::Bias,
            });
            if bn {
                specs.push(ParamSpec {
                    name: format!("up{i}.gain"),
                    shape: vec![co],
                    kind: ParamKind::Gain,
                });
                specs.push(ParamSpec {
                    name: format!("up{i}.shift"),
                    shape: vec![co],
                    kind: ParamKind::Shift,
                });
            }
        }
        conv("head", self.colors as usize, 2 * b, k, k, 2 * b * k * k, false, &mut specs);
        specs
    }

    pub fn param_count(&self) -> usize {
        self.param_specs()
            .iter()
            .map(|s| s.shape.iter().product::<usize>())
            .sum()
    }
}

/// A named parameter tensor.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Clone, Debug)]
pub struct Network {
    cfg: NetConfig,
    params: Vec<Param>,
}

/// Handles into the tape after a forward pass.
pub struct ForwardPass {
    /// The softmax output, shape [colors, h, w].
    pub output: NodeId,
    /// Tape leaf of every parameter, aligned with `Network::params`.
    pub param_nodes: Vec<NodeId>,
    /// Inputs of every ReLU, in execution order — lets callers check how
    /// close activations sit to the kink (finite differencing cares).
    pub pre_relu: Vec<NodeId>,
}

impl Network {
    pub fn init(cfg: NetConfig, seed: u64) -> Result<Network, String> {
        cfg.validate()?;
        let mut rng = Rng::stream(seed, 0x6e65742d696e6974); // distinct stream per purpose
        let mut params = Vec::new();
        for spec in cfg.param_specs() {
            let n: usize = spec.shape.iter().product();
            let data = match spec.kind {
                ParamKind::ConvWeight { fan_in } => {
                    let std = fmath::sqrt(2.0 / fan_in as f64);
                    (0..n).map(|_| std * rng.normal()).collect::<Vec<f64>>()
                }
                ParamKind::Bias | ParamKind::Shift => vec![0.0; n],
                ParamKind::Gain => vec![1.0; n],
            };
            params.push(Param {
                name: spec.name,
                tensor: Tensor::from_vec(&spec.shape, data).map_err(|e| format!("{e}"))?,
            });
        }
        Ok(Network { cfg, params })
    }

    pub fn cfg(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Builds the whole forward computation on `tape`. The input must be
    /// [input_channels, h, w] with h, w multiples of 2^depth.
    pub fn forward(&self, tape: &mut Tape, image: &Tensor) -> Result<ForwardPass, String> {
        let (c, h, w) = image.dims3().map_err(|e| format!("{e}"))?;
        if c != self.cfg.input_channels {
            return Err(format!(
                "network expects {} input channels, image has {c}",
                self.cfg.input_channels
            ));
        }
        let div = self.cfg.divisor();
        if h % div != 0 || w % div != 0 || h == 0 || w == 0 {
            return Err(format!(
                "input {h}x{w} must have sides that are positive multiples of {div} for depth {}",
                self.cfg.depth
            ));
        }
        if !image.is_finite() {
            return Err(String::from("input image contains non-finite values"));
        }

        let param_nodes: Vec<NodeId> = self
            .params
            .iter()
            .map(|p| tape.leaf(p.tensor.clone(), true))
            .collect();
        let node = |name: &str| -> NodeId {
            // init() created every name; forward only looks up its own.
            param_nodes[self.param_index(name).expect("parameter exists")]
        };
        let mut pre_relu = Vec::new();
        let err = |e: crate::tensor::TensorError| format!("{e}");

        // One conv + bias (+ norm) + ReLU block.
        let block = |tape: &mut Tape,
                         x: NodeId,
                         name: &str,
                         pre_relu: &mut Vec<NodeId>|
         -> Result<NodeId, String> {
            let wgt = node(&format!("{name}.weight"));
            let conv = if name.starts_with("up") {
                tape.conv_transpose2d(x, wgt, 2, 0)
            } else {
                tape.conv2d(x, wgt, 1, KERNEL_SIZE / 2)
            }
            .map_err(err)?;
            let mut cur = tape.add_channel_bias(conv, node(&format!("{name}.bias"))).map_err(err)?;
            if self.cfg.use_batchnorm {
                cur = tape
                    .channel_norm(cur, node(&format!("{name}.gain")), node(&format!("{name}.shift")))
                    .map_err(err)?;
            }
            pre_relu.push(cur);
            tape.relu(cur).map_err(err)
        };

        let input = tape.leaf(image.clone(), false);
        let mut skips = Vec::with_capacity(self.cfg.depth + 1);
        let mut cur = block(tape, input, "stem", &mut pre_relu)?;
        skips.push(cur);
        for i in 1..=self.cfg.depth {
            let pooled = tape.max_pool2x2(cur).map_err(err)?;
            cur = block(tape, pooled, &format!("down{i}"), &mut pre_relu)?;
            skips.push(cur);
        }
        for i in (1..=self.cfg.depth).rev() {
            let up = block(tape, cur, &format!("up{i}"), &mut pre_relu)?;
            cur = tape.concat_channels(up, skips[i - 1]).map_err(err)?;
        }
        let logits = tape.conv2d(cur, node("head.weight"), 1, KERNEL_SIZE / 2).map_err(err)?;
        let biased = tape.add_channel_bias(logits, node("head.bias")).map_err(err)?;
        let output = tape.channel_softmax(biased).map_err(err)?;
        Ok(ForwardPass {
            output,
            param_nodes,
            pre_relu,
        })
    }

    /// Forward pass without gradient bookkeeping, producing a probability
    /// map.
    pub fn infer(&self, image: &Image) -> Result<ColorProbMap, String> {
        let mut tape = Tape::new();
        let pass = self.forward(&mut tape, &image.to_tensor())?;
        ColorProbMap::from_tensor(tape.value(pass.output))
    }
}
