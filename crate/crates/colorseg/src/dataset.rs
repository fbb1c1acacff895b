//! On-disk datasets: numbered image/label pairs plus a manifest that
//! records exactly how the scenes were generated.
//!
//! Layout under a dataset directory:
//! * `images/NNNN.pgm` — 8-bit grayscale (NNNN = zero-padded sample index);
//!   3-channel scenes are stored as `images/NNNN.png` instead
//! * `labels/NNNN.pgm` — 16-bit instance ids (0 = background)
//! * `manifest.txt` — `key=value` scene parameters and sample count

use std::path::{Path, PathBuf};

use colorseg_core::image::Image;
use colorseg_core::labels::InstanceLabelMap;
use colorseg_core::synth::{generate, Sample, SceneConfig, SceneKind};

use crate::error::{CliError, Result};
use crate::imageio::{read_image, read_labels, write_image, write_labels};

fn kind_name(kind: SceneKind) -> &'static str {
    match kind {
        SceneKind::Blobs => "blobs",
        SceneKind::Rods => "rods",
        SceneKind::Occluded => "occluded",
    }
}

pub fn parse_kind(value: &str) -> Result<SceneKind> {
    match value {
        "blobs" => Ok(SceneKind::Blobs),
        "rods" => Ok(SceneKind::Rods),
        "occluded" => Ok(SceneKind::Occluded),
        _ => Err(CliError::Config(format!(
            "scene kind must be blobs, rods, or occluded, got `{value}`"
        ))),
    }
}

pub fn manifest_text(cfg: &SceneConfig, count: usize) -> String {
    format!(
        "kind = {}\nheight = {}\nwidth = {}\nmin_instances = {}\nmax_instances = {}\n\
         min_size = {}\nmax_size = {}\nallow_overlap = {}\nmin_gap = {}\nnoise = {}\n\
         channels = {}\nseed = {}\ncount = {}\n",
        kind_name(cfg.kind),
        cfg.height,
        cfg.width,
        cfg.min_instances,
        cfg.max_instances,
        cfg.min_size,
        cfg.max_size,
        cfg.allow_overlap,
        cfg.min_gap,
        cfg.noise,
        cfg.channels,
        cfg.seed,
        count
    )
}

/// Parses a manifest back into the scene config and sample count.
/// Float fields round-trip exactly (shortest-repr formatting).
pub fn parse_manifest(text: &str) -> Result<(SceneConfig, usize)> {
    let mut cfg = SceneConfig::blobs(64, 64);
    let mut count: Option<usize> = None;
    let bad = |key: &str, value: &str| CliError::Data(format!("manifest key `{key}`: bad value `{value}`"));
    for raw in text.lines() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Data(format!("manifest: expected key=value, got `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "kind" => cfg.kind = parse_kind(value)?,
            "height" => cfg.height = value.parse().map_err(|_| bad(key, value))?,
            "width" => cfg.width = value.parse().map_err(|_| bad(key, value))?,
            "min_instances" => cfg.min_instances = value.parse().map_err(|_| bad(key, value))?,
            "max_instances" => cfg.max_instances = value.parse().map_err(|_| bad(key, value))?,
            "min_size" => cfg.min_size = value.parse().map_err(|_| bad(key, value))?,
            "max_size" => cfg.max_size = value.parse().map_err(|_| bad(key, value))?,
            "allow_overlap" => cfg.allow_overlap = value.parse().map_err(|_| bad(key, value))?,
            "min_gap" => cfg.min_gap = value.parse().map_err(|_| bad(key, value))?,
            "noise" => cfg.noise = value.parse().map_err(|_| bad(key, value))?,
            "channels" => cfg.channels = value.parse().map_err(|_| bad(key, value))?,
            "seed" => cfg.seed = value.parse().map_err(|_| bad(key, value))?,
            "count" => count = Some(value.parse().map_err(|_| bad(key, value))?),
            _ => return Err(CliError::Data(format!("manifest: unknown key `{key}`"))),
        }
    }
    let count = count.ok_or_else(|| CliError::Data("manifest: missing `count`".into()))?;
    Ok((cfg, count))
}

fn image_name(index: usize, channels: usize) -> String {
    if channels == 1 {
        format!("{index:04}.pgm")
    } else {
        format!("{index:04}.png")
    }
}

/// Generates `count` scenes and writes the full dataset directory.
pub fn write_dataset(dir: &Path, cfg: &SceneConfig, count: usize) -> Result<()> {
    cfg.validate().map_err(CliError::Config)?;
    if count == 0 {
        return Err(CliError::Config("dataset count must be at least 1".into()));
    }
    let images = dir.join("images");
    let labels = dir.join("labels");
    std::fs::create_dir_all(&images).map_err(|e| CliError::io(&images, e))?;
    std::fs::create_dir_all(&labels).map_err(|e| CliError::io(&labels, e))?;
    for i in 0..count {
        let sample = generate(cfg, i as u64).map_err(CliError::Data)?;
        write_image(&images.join(image_name(i, cfg.channels)), &sample.image)?;
        write_labels(&labels.join(format!("{i:04}.pgm")), &sample.labels)?;
    }
    let manifest = dir.join("manifest.txt");
    std::fs::write(&manifest, manifest_text(cfg, count)).map_err(|e| CliError::io(&manifest, e))
}

/// Numbered files (stem parses as usize) under `dir` with one of `exts`,
/// sorted by index.
fn numbered_files(dir: &Path, exts: &[&str]) -> Result<Vec<(usize, PathBuf)>> {
    let mut out = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        let ext_ok = path
            .extension()
            .map(|e| exts.iter().any(|x| e.eq_ignore_ascii_case(x)))
            .unwrap_or(false);
        if !ext_ok {
            continue;
        }
        if let Some(idx) = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<usize>().ok())
        {
            out.push((idx, path));
        }
    }
    out.sort();
    Ok(out)
}

/// Loads every image/label pair of a dataset directory into memory,
/// ordered by sample index.
pub fn load_dataset(dir: &Path) -> Result<Vec<Sample>> {
    let image_files = numbered_files(&dir.join("images"), &["pgm", "png"])?;
    if image_files.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no numbered images found",
            dir.join("images").display()
        )));
    }
    let mut samples = Vec::with_capacity(image_files.len());
    for (idx, image_path) in image_files {
        let label_path = dir.join("labels").join(format!("{idx:04}.pgm"));
        if !label_path.exists() {
            return Err(CliError::Data(format!(
                "{}: missing label file for image {idx:04}",
                label_path.display()
            )));
        }
        let image = read_image(&image_path)?;
        let labels = read_labels(&label_path)?;
        if image.height() != labels.height() || image.width() != labels.width() {
            return Err(CliError::Data(format!(
                "sample {idx:04}: image is {}x{} but labels are {}x{}",
                image.height(),
                image.width(),
                labels.height(),
                labels.width()
            )));
        }
        samples.push(Sample { image, labels });
    }
    Ok(samples)
}

/// Loads every numbered image of a directory (no labels required),
/// for prediction on unlabeled inputs. Accepts a bare directory of images
/// or a dataset directory (uses its `images/` subdirectory).
pub fn load_images(dir: &Path) -> Result<Vec<(usize, Image)>> {
    let root = if dir.join("images").is_dir() {
        dir.join("images")
    } else {
        dir.to_path_buf()
    };
    let files = numbered_files(&root, &["pgm", "png"])?;
    if files.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no numbered images found",
            root.display()
        )));
    }
    files
        .into_iter()
        .map(|(idx, path)| Ok((idx, read_image(&path)?)))
        .collect()
}

/// Loads every numbered 16-bit label map of a directory, sorted by index.
/// Accepts a bare directory of label files or a dataset directory (uses
/// its `labels/` subdirectory).
pub fn load_label_maps(dir: &Path) -> Result<Vec<(usize, InstanceLabelMap)>> {
    let root = if dir.join("labels").is_dir() {
        dir.join("labels")
    } else {
        dir.to_path_buf()
    };
    let files = numbered_files(&root, &["pgm"])?;
    if files.is_empty() {
        return Err(CliError::Data(format!(
            "{}: no numbered label maps found",
            root.display()
        )));
    }
    files
        .into_iter()
        .map(|(idx, path)| Ok((idx, read_labels(&path)?)))
        .collect()
}
