//! File-level image/label plumbing: PGM for data, PNG for human-facing
//! renders, and the fixed overlay palette.
//!
//! Grayscale pixel values map to [0, 1] as `k / maxval`; writing quantizes
//! with round-to-nearest. Reading back a file we wrote reproduces the file
//! byte-for-byte (values live on the quantization lattice), which is what
//! keeps dataset round trips bit-exact. Label maps are always 16-bit PGM.

use std::path::Path;

use colorseg_core::image::Image;
use colorseg_core::labels::InstanceLabelMap;
use colorseg_core::postprocess::{HardColorMap, InstanceSet};

use crate::error::{CliError, Result};
use crate::pgm::{read_pgm, write_pgm16, write_pgm8, PgmData};

/// Overlay palette: color index 1 (background) is black; foreground colors
/// cycle through these 16 RGB triples in order (index 2 → entry 0, …).
/// Instance-id renders use the same cycle (id 1 → entry 0).
pub const PALETTE: [[u8; 3]; 16] = [
    [230, 25, 75],   // red
    [60, 180, 75],   // green
    [255, 225, 25],  // yellow
    [0, 130, 200],   // blue
    [245, 130, 48],  // orange
    [145, 30, 180],  // purple
    [70, 240, 240],  // cyan
    [240, 50, 230],  // magenta
    [210, 245, 60],  // lime
    [250, 190, 212], // pink
    [0, 128, 128],   // teal
    [220, 190, 255], // lavender
    [170, 110, 40],  // brown
    [255, 250, 200], // beige
    [128, 0, 0],     // maroon
    [170, 255, 195], // mint
];

/// RGB of a 1-based color index (1 = background = black).
pub fn color_rgb(color: u8) -> [u8; 3] {
    if color <= 1 {
        [0, 0, 0]
    } else {
        PALETTE[(color as usize - 2) % PALETTE.len()]
    }
}

/// RGB of an instance id (0 = background = black).
pub fn id_rgb(id: u16) -> [u8; 3] {
    if id == 0 {
        [0, 0, 0]
    } else {
        PALETTE[(id as usize - 1) % PALETTE.len()]
    }
}

fn has_ext(path: &Path, ext: &str) -> bool {
    path.extension()
        .map(|e| e.eq_ignore_ascii_case(ext))
        .unwrap_or(false)
}

/// Reads a grayscale PGM (8- or 16-bit) or a PNG (gray → 1 channel,
/// anything with color → 3 channels) into [0, 1] floats.
pub fn read_image(path: &Path) -> Result<Image> {
    if has_ext(path, "pgm") {
        let pgm = read_pgm(path)?;
        let data: Vec<f64> = match pgm.data {
            PgmData::Eight(v) => v.iter().map(|&k| k as f64 / 255.0).collect(),
            PgmData::Sixteen(v) => v.iter().map(|&k| k as f64 / 65535.0).collect(),
        };
        Image::from_planes(1, pgm.height, pgm.width, data).map_err(CliError::Shape)
    } else if has_ext(path, "png") {
        let img = image::open(path)
            .map_err(|e| CliError::Format(format!("{}: {e}", path.display())))?;
        match img {
            image::DynamicImage::ImageLuma8(g) => {
                let (w, h) = (g.width() as usize, g.height() as usize);
                let data: Vec<f64> = g.into_raw().iter().map(|&k| k as f64 / 255.0).collect();
                Image::from_planes(1, h, w, data).map_err(CliError::Shape)
            }
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = (rgb.width() as usize, rgb.height() as usize);
                let raw = rgb.into_raw(); // interleaved RGB
                let mut planes = vec![0.0; 3 * h * w];
                for p in 0..h * w {
                    for c in 0..3 {
                        planes[c * h * w + p] = raw[3 * p + c] as f64 / 255.0;
                    }
                }
                Image::from_planes(3, h, w, planes).map_err(CliError::Shape)
            }
        }
    } else {
        Err(CliError::Format(format!(
            "{}: unsupported image extension (want .pgm or .png)",
            path.display()
        )))
    }
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an image: `.pgm` (single channel only, 8-bit) or `.png` (gray or
/// RGB). Values are clamped to [0, 1] and quantized.
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    if has_ext(path, "pgm") {
        if img.channels() != 1 {
            return Err(CliError::Shape(format!(
                "PGM holds one channel, image has {}",
                img.channels()
            )));
        }
        let data: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
        write_pgm8(path, img.width(), img.height(), &data)
    } else if has_ext(path, "png") {
        let (h, w) = (img.height(), img.width());
        match img.channels() {
            1 => {
                let raw: Vec<u8> = img.data().iter().map(|&v| quantize(v)).collect();
                let buf = image::GrayImage::from_raw(w as u32, h as u32, raw).unwrap();
                buf.save(path)
                    .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
            }
            3 => {
                let mut raw = vec![0u8; 3 * h * w];
                for p in 0..h * w {
                    for c in 0..3 {
                        raw[3 * p + c] = quantize(img.data()[c * h * w + p]);
                    }
                }
                let buf = image::RgbImage::from_raw(w as u32, h as u32, raw).unwrap();
                buf.save(path)
                    .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
            }
            n => Err(CliError::Shape(format!("cannot write {n}-channel image"))),
        }
    } else {
        Err(CliError::Format(format!(
            "{}: unsupported image extension (want .pgm or .png)",
            path.display()
        )))
    }
}

/// Reads a 16-bit PGM of instance ids. 8-bit files are rejected: label maps
/// are 16-bit by contract.
pub fn read_labels(path: &Path) -> Result<InstanceLabelMap> {
    let pgm = read_pgm(path)?;
    match pgm.data {
        PgmData::Sixteen(ids) => InstanceLabelMap::new(pgm.height, pgm.width, ids)
            .map_err(|e| CliError::Format(format!("{}: {e}", path.display()))),
        PgmData::Eight(_) => Err(CliError::Format(format!(
            "{}: label maps must be 16-bit PGM",
            path.display()
        ))),
    }
}

pub fn write_labels(path: &Path, labels: &InstanceLabelMap) -> Result<()> {
    write_pgm16(path, labels.width(), labels.height(), labels.ids())
}

fn save_rgb(path: &Path, width: usize, height: usize, raw: Vec<u8>) -> Result<()> {
    let buf = image::RgbImage::from_raw(width as u32, height as u32, raw).unwrap();
    buf.save(path)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Renders instances on a black background, each painted with the palette
/// entry of its assigned color.
pub fn render_overlay(path: &Path, set: &InstanceSet) -> Result<()> {
    let (h, w) = (set.height, set.width);
    let mut raw = vec![0u8; 3 * h * w];
    for inst in &set.instances {
        let rgb = color_rgb(inst.color);
        for &p in &inst.pixels {
            raw[3 * p as usize..3 * p as usize + 3].copy_from_slice(&rgb);
        }
    }
    save_rgb(path, w, h, raw)
}

/// Renders an argmax color map directly (background black).
pub fn render_color_map(path: &Path, z: &HardColorMap) -> Result<()> {
    let mut raw = vec![0u8; 3 * z.height() * z.width()];
    for (p, &c) in z.colors().iter().enumerate() {
        raw[3 * p..3 * p + 3].copy_from_slice(&color_rgb(c));
    }
    save_rgb(path, z.width(), z.height(), raw)
}

/// Renders a label map, cycling the palette by instance id.
pub fn render_label_map(path: &Path, labels: &InstanceLabelMap) -> Result<()> {
    let mut raw = vec![0u8; 3 * labels.height() * labels.width()];
    for (p, &id) in labels.ids().iter().enumerate() {
        raw[3 * p..3 * p + 3].copy_from_slice(&id_rgb(id));
    }
    save_rgb(path, labels.width(), labels.height(), raw)
}
