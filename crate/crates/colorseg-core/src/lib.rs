//! Core algorithms for instance segmentation by pixel coloring.
//!
//! The pipeline: an encoder-decoder network ([`net`]) maps an image to a
//! per-pixel probability distribution over a small set of colors (color 1 is
//! reserved for background). Training ([`loss`]) re-derives the target color
//! of every instance on each step from the network's own output, preferring
//! colors that are strong inside the instance and weak in a surrounding halo,
//! so touching instances are pushed toward different colors. Inference
//! ([`postprocess`]) hardens the probabilities, extracts connected components
//! per color, filters specks, and optionally re-merges nearby same-color
//! fragments. [`metrics`] scores predictions against ground truth and
//! [`synth`] generates the deterministic datasets used by the test suite.
//!
//! Everything here is alloc-only (`no_std` compatible); file formats, the
//! trainer loop, and the CLI live in the companion `colorseg` crate.
//!
//! Determinism contract: all floating-point reductions run in a fixed,
//! documented order, so identical seeds and inputs give bit-identical
//! results on the same build.

#![cfg_attr(not(feature = "std"), no_std)]

#[cfg(all(not(feature = "std"), not(feature = "libm")))]
compile_error!("colorseg-core needs either the `std` or the `libm` feature for float math");

extern crate alloc;

mod fmath;

pub mod adam;
pub mod image;
pub mod labels;
pub mod loss;
pub mod metrics;
pub mod net;
pub mod postprocess;
pub mod probmap;
pub mod rng;
pub mod synth;
pub mod tensor;
