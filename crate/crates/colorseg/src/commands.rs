//! Implementations behind the CLI verbs. Each takes already-merged
//! configuration and paths, does the work, prints a human summary to
//! stdout, and writes machine-readable artifacts under the output
//! directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use colorseg_core::labels::InstanceLabelMap;
use colorseg_core::metrics::{
    average_precision_at_iou50, count_difference, foreground_iou, symmetric_best_dice, Detection,
    GroundTruth,
};
use colorseg_core::net::Network;
use colorseg_core::postprocess::{segment, InstanceSet, PostConfig};
use colorseg_core::synth::SceneConfig;

use crate::checkpoint::read_checkpoint;
use crate::config::RunConfig;
use crate::dataset::{load_dataset, load_images, load_label_maps, write_dataset};
use crate::error::{CliError, Result};
use crate::imageio::{render_label_map, render_overlay, write_labels};
use crate::sweep::{prepare_image, run_sweep, SweepResult};
use crate::trainer::train;

fn post_config(run: &RunConfig) -> PostConfig {
    PostConfig {
        size_threshold: run.tau,
        merge_radius: run.rho,
        merge_metric: run.merge_metric,
        connectivity: run.connectivity,
    }
}

pub fn cmd_gen_data(out: &Path, cfg: &SceneConfig, count: usize) -> Result<()> {
    write_dataset(out, cfg, count)?;
    println!(
        "wrote {count} samples to {} ({:?}, {}x{})",
        out.display(),
        cfg.kind,
        cfg.height,
        cfg.width
    );
    Ok(())
}

pub fn cmd_train(
    run: &RunConfig,
    data: &Path,
    out: &Path,
    resume: Option<&Path>,
) -> Result<()> {
    let samples = load_dataset(data)?;
    let report = train(run, &samples, out, resume)?;
    println!(
        "trained {} iterations on {} samples, final batch loss {:.6}",
        report.iterations,
        samples.len(),
        report.final_loss
    );
    println!("checkpoint: {}", report.checkpoint.display());
    println!("loss log: {}", report.loss_log.display());
    Ok(())
}

/// Loads a checkpoint and segments every numbered image under `input`,
/// writing `labels/NNNN.pgm`, `overlays/NNNN.png`, and `confidences.csv`.
pub fn cmd_predict(run: &RunConfig, checkpoint: &Path, input: &Path, out: &Path) -> Result<()> {
    let net = read_checkpoint(checkpoint)?.net;
    let images = load_images(input)?;
    let post = post_config(run);
    post.validate().map_err(CliError::Config)?;

    let labels_dir = out.join("labels");
    let overlays_dir = out.join("overlays");
    std::fs::create_dir_all(&labels_dir).map_err(|e| CliError::io(&labels_dir, e))?;
    std::fs::create_dir_all(&overlays_dir).map_err(|e| CliError::io(&overlays_dir, e))?;

    let mut confidences = String::from("image,instance,confidence\n");
    for (idx, image) in &images {
        let set = predict_one(&net, image, &post)?;
        let labels = set
            .to_label_map()
            .map_err(CliError::Numeric)?;
        write_labels(&labels_dir.join(format!("{idx:04}.pgm")), &labels)?;
        render_overlay(&overlays_dir.join(format!("{idx:04}.png")), &set)?;
        for (ord, inst) in set.instances.iter().enumerate() {
            writeln!(confidences, "{idx},{},{}", ord + 1, inst.confidence).unwrap();
        }
    }
    let conf_path = out.join("confidences.csv");
    std::fs::write(&conf_path, confidences).map_err(|e| CliError::io(&conf_path, e))?;
    println!("segmented {} images -> {}", images.len(), out.display());
    Ok(())
}

pub fn predict_one(
    net: &Network,
    image: &colorseg_core::image::Image,
    post: &PostConfig,
) -> Result<InstanceSet> {
    let y = net.infer(image).map_err(CliError::Shape)?;
    segment(&y, post).map_err(CliError::Numeric)
}

#[derive(Debug)]
pub struct EvalReport {
    pub indices: Vec<usize>,
    pub per_image_sbd: Vec<f64>,
    pub per_image_dic: Vec<usize>,
    pub per_image_fg_iou: Vec<f64>,
    pub mean_sbd: f64,
    pub mean_dic: f64,
    pub mean_fg_iou: f64,
    pub ap50: f64,
}

impl EvalReport {
    pub fn table(&self) -> String {
        let mut out = String::from("image      sbd  |DiC|   fg_iou\n");
        for (((idx, sbd), dic), fg) in self
            .indices
            .iter()
            .zip(&self.per_image_sbd)
            .zip(&self.per_image_dic)
            .zip(&self.per_image_fg_iou)
        {
            writeln!(out, "{idx:04}  {sbd:.6}  {dic:5}  {fg:.6}").unwrap();
        }
        writeln!(out, "mean  {:.6}  {:5.2}  {:.6}", self.mean_sbd, self.mean_dic, self.mean_fg_iou)
            .unwrap();
        writeln!(out, "ap50  {:.6}", self.ap50).unwrap();
        out
    }

    /// Machine-readable `key = value` lines; floats keep full precision.
    pub fn key_values(&self) -> String {
        let mut out = String::new();
        writeln!(out, "images = {}", self.indices.len()).unwrap();
        writeln!(out, "mean_sbd = {}", self.mean_sbd).unwrap();
        writeln!(out, "mean_dic = {}", self.mean_dic).unwrap();
        writeln!(out, "mean_fg_iou = {}", self.mean_fg_iou).unwrap();
        writeln!(out, "ap50 = {}", self.ap50).unwrap();
        for (((idx, sbd), dic), fg) in self
            .indices
            .iter()
            .zip(&self.per_image_sbd)
            .zip(&self.per_image_dic)
            .zip(&self.per_image_fg_iou)
        {
            writeln!(out, "sbd_{idx:04} = {sbd}").unwrap();
            writeln!(out, "dic_{idx:04} = {dic}").unwrap();
            writeln!(out, "fg_iou_{idx:04} = {fg}").unwrap();
        }
        out
    }
}

/// Reads `confidences.csv` written by predict (or provided by hand) from
/// the prediction directory or its parent. Missing file means every
/// instance scores 1.0.
fn load_confidences(pred: &Path) -> Result<BTreeMap<(usize, u16), f64>> {
    let mut candidates = vec![pred.join("confidences.csv")];
    if let Some(parent) = pred.parent() {
        candidates.push(parent.join("confidences.csv"));
    }
    let Some(path) = candidates.into_iter().find(|p| p.exists()) else {
        return Ok(BTreeMap::new());
    };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 && line.starts_with("image,") {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let parse = || {
            CliError::Data(format!(
                "{}:{}: expected image,instance,confidence",
                path.display(),
                lineno + 1
            ))
        };
        let image: usize = parts.next().and_then(|s| s.trim().parse().ok()).ok_or_else(parse)?;
        let instance: u16 = parts.next().and_then(|s| s.trim().parse().ok()).ok_or_else(parse)?;
        let conf: f64 = parts.next().and_then(|s| s.trim().parse().ok()).ok_or_else(parse)?;
        if !conf.is_finite() {
            return Err(parse());
        }
        out.insert((image, instance), conf);
    }
    Ok(out)
}

pub fn evaluate(pred: &Path, truth: &Path) -> Result<EvalReport> {
    let preds = load_label_maps(pred)?;
    let truths = load_label_maps(truth)?;
    if preds.len() != truths.len()
        || preds.iter().zip(&truths).any(|((a, _), (b, _))| a != b)
    {
        return Err(CliError::Data(format!(
            "prediction and ground-truth directories do not hold the same samples \
             ({} vs {} label maps)",
            preds.len(),
            truths.len()
        )));
    }
    let confidences = load_confidences(pred)?;

    let mut report = EvalReport {
        indices: Vec::new(),
        per_image_sbd: Vec::new(),
        per_image_dic: Vec::new(),
        per_image_fg_iou: Vec::new(),
        mean_sbd: 0.0,
        mean_dic: 0.0,
        mean_fg_iou: 0.0,
        ap50: 0.0,
    };
    let mut detections = Vec::new();
    let mut gts = Vec::new();
    for ((idx, p), (_, g)) in preds.iter().zip(&truths) {
        if p.height() != g.height() || p.width() != g.width() {
            return Err(CliError::Data(format!(
                "sample {idx:04}: prediction is {}x{} but ground truth is {}x{}",
                p.height(),
                p.width(),
                g.height(),
                g.width()
            )));
        }
        let p_sets = p.all_instance_pixels();
        let g_sets = g.all_instance_pixels();
        report.indices.push(*idx);
        report.per_image_sbd.push(symmetric_best_dice(&p_sets, &g_sets));
        report
            .per_image_dic
            .push(count_difference(p_sets.len(), g_sets.len()));
        report.per_image_fg_iou.push(foreground_iou(&p_sets, &g_sets));
        for (ord, pixels) in p_sets.into_iter().enumerate() {
            let confidence = confidences
                .get(&(*idx, ord as u16 + 1))
                .copied()
                .unwrap_or(1.0);
            detections.push(Detection { image: *idx, confidence, pixels });
        }
        for pixels in g_sets {
            gts.push(GroundTruth { image: *idx, pixels });
        }
    }
    let n = report.indices.len() as f64;
    report.mean_sbd = report.per_image_sbd.iter().sum::<f64>() / n;
    report.mean_dic = report.per_image_dic.iter().map(|&d| d as f64).sum::<f64>() / n;
    report.mean_fg_iou = report.per_image_fg_iou.iter().sum::<f64>() / n;
    report.ap50 = average_precision_at_iou50(&detections, &gts).map_err(CliError::Numeric)?;
    Ok(report)
}

pub fn cmd_eval(pred: &Path, truth: &Path, out: Option<&Path>) -> Result<()> {
    let report = evaluate(pred, truth)?;
    print!("{}", report.table());
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join("report.txt");
        std::fs::write(&path, report.key_values()).map_err(|e| CliError::io(&path, e))?;
        println!("report: {}", path.display());
    }
    Ok(())
}

pub fn cmd_sweep(
    run: &RunConfig,
    checkpoint: &Path,
    data: &Path,
    taus: &[usize],
    rhos: &[f64],
    out: Option<&Path>,
) -> Result<()> {
    let net = read_checkpoint(checkpoint)?.net;
    let samples = load_dataset(data)?;
    let mut cached = Vec::with_capacity(samples.len());
    for sample in &samples {
        let y = net.infer(&sample.image).map_err(CliError::Shape)?;
        cached.push(prepare_image(
            &y,
            &sample.labels,
            run.connectivity,
            run.merge_metric,
        )?);
    }
    let result = run_sweep(&cached, taus, rhos)?;
    print!("{}", sweep_table(&result));
    let best = result.points[result.best];
    println!(
        "best: tau={} rho={} sbd={:.6} dic={:.2}",
        best.tau, best.rho, best.sbd, best.dic
    );
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = dir.join("sweep.csv");
        let mut csv = String::from("tau,rho,sbd,dic\n");
        for p in &result.points {
            writeln!(csv, "{},{},{},{}", p.tau, p.rho, p.sbd, p.dic).unwrap();
        }
        std::fs::write(&path, csv).map_err(|e| CliError::io(&path, e))?;
        println!("grid: {}", path.display());
    }
    Ok(())
}

fn sweep_table(result: &SweepResult) -> String {
    let mut out = String::from("  tau    rho       sbd    dic\n");
    for p in &result.points {
        writeln!(out, "{:5}  {:5}  {:.6}  {:5.2}", p.tau, p.rho, p.sbd, p.dic).unwrap();
    }
    out
}

/// Renders 16-bit label maps (a single file or every numbered map under a
/// directory) to color PNGs.
pub fn cmd_render(labels: &Path, out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    let inputs: Vec<(String, InstanceLabelMap)> = if labels.is_file() {
        let stem = labels
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("render")
            .to_string();
        vec![(stem, crate::imageio::read_labels(labels)?)]
    } else {
        load_label_maps(labels)?
            .into_iter()
            .map(|(idx, map)| (format!("{idx:04}"), map))
            .collect()
    };
    for (stem, map) in &inputs {
        render_label_map(&out.join(format!("{stem}.png")), map)?;
    }
    println!("rendered {} label maps -> {}", inputs.len(), out.display());
    Ok(())
}
