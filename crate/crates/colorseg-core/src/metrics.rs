//! Evaluation measures for instance segmentations.
//!
//! Instances are pixel-index sets (sorted, ascending). The headline score
//! is symmetric best dice ([`symmetric_best_dice`]): for each instance in
//! one set take the best dice against any instance in the other, average,
//! do the same in reverse, and keep the minimum — so both missed objects
//! and hallucinated ones pull the score down. Also here: absolute instance
//! count difference, foreground IoU, and average precision at IoU ≥ 0.5
//! over a whole dataset ([`average_precision_at_iou50`]).

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

/// Number of common elements of two ascending slices.
fn intersection_count(a: &[u32], b: &[u32]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        if a[i] == b[j] {
            n += 1;
            i += 1;
            j += 1;
        } else if a[i] < b[j] {
            i += 1;
        } else {
            j += 1;
        }
    }
    n
}

/// Dice coefficient `2|A∩B| / (|A|+|B|)`; two empty sets count as identical.
pub fn dice(a: &[u32], b: &[u32]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    2.0 * intersection_count(a, b) as f64 / (a.len() + b.len()) as f64
}

/// Intersection over union; two empty sets count as identical.
pub fn iou(a: &[u32], b: &[u32]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let inter = intersection_count(a, b);
    inter as f64 / (a.len() + b.len() - inter) as f64
}

/// Mean over instances of `p` of their best dice against `q`. Both sets
/// empty → 1; exactly one empty → 0.
pub fn best_dice(p: &[Vec<u32>], q: &[Vec<u32>]) -> f64 {
    match (p.is_empty(), q.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut acc = 0.0;
    for a in p {
        let mut best = 0.0f64;
        for b in q {
            let d = dice(a, b);
            if d > best {
                best = d;
            }
        }
        acc += best;
    }
    acc / p.len() as f64
}

/// `min(best_dice(p, q), best_dice(q, p))`.
pub fn symmetric_best_dice(p: &[Vec<u32>], q: &[Vec<u32>]) -> f64 {
    best_dice(p, q).min(best_dice(q, p))
}

/// Absolute difference of instance counts.
pub fn count_difference(predicted: usize, actual: usize) -> usize {
    predicted.abs_diff(actual)
}

/// IoU of the unions of all instance pixels (class-agnostic foreground
/// mask). Both unions empty → 1.
pub fn foreground_iou(p: &[Vec<u32>], q: &[Vec<u32>]) -> f64 {
    let mut up: Vec<u32> = p.iter().flatten().copied().collect();
    let mut uq: Vec<u32> = q.iter().flatten().copied().collect();
    up.sort_unstable();
    up.dedup();
    uq.sort_unstable();
    uq.dedup();
    iou(&up, &uq)
}

/// One predicted instance in a dataset-wide detection pool.
#[derive(Clone, Debug)]
pub struct Detection {
    pub image: usize,
    pub confidence: f64,
    pub pixels: Vec<u32>,
}

/// One ground-truth instance.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub image: usize,
    pub pixels: Vec<u32>,
}

/// Average precision at IoU ≥ 0.5, pooled over all images.
///
/// Detections are visited in order of descending confidence (ties: image
/// index, then submission order). Each claims the unmatched ground-truth
/// instance of its own image with the highest IoU if that IoU reaches 0.5;
/// otherwise it is a false positive. The precision–recall curve is
/// integrated with all-point interpolation (precision replaced by the max
/// to its right). No ground truth at all → 1 when there are also no
/// detections, else 0.
pub fn average_precision_at_iou50(
    detections: &[Detection],
    ground_truth: &[GroundTruth],
) -> Result<f64, String> {
    for d in detections {
        if !d.confidence.is_finite() {
            return Err(String::from("detection confidence must be finite"));
        }
    }
    if ground_truth.is_empty() {
        return Ok(if detections.is_empty() { 1.0 } else { 0.0 });
    }
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&i, &j| {
        detections[j]
            .confidence
            .partial_cmp(&detections[i].confidence)
            .unwrap()
            .then(detections[i].image.cmp(&detections[j].image))
            .then(i.cmp(&j))
    });
    let mut matched = vec![false; ground_truth.len()];
    let mut tp = Vec::with_capacity(order.len());
    for &di in &order {
        let det = &detections[di];
        let mut best: Option<(f64, usize)> = None;
        for (gi, gt) in ground_truth.iter().enumerate() {
            if gt.image != det.image || matched[gi] {
                continue;
            }
            let v = iou(&det.pixels, &gt.pixels);
            // Strict > keeps the first (lowest-index) ground truth on ties.
            if best.map_or(true, |(bv, _)| v > bv) {
                best = Some((v, gi));
            }
        }
        match best {
            Some((v, gi)) if v >= 0.5 => {
                matched[gi] = true;
                tp.push(true);
            }
            _ => tp.push(false),
        }
    }
    // Precision/recall after each detection, then all-point interpolation.
    let total = ground_truth.len() as f64;
    let mut precision = Vec::with_capacity(tp.len());
    let mut recall = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (rank, &is_tp) in tp.iter().enumerate() {
        if is_tp {
            hits += 1;
        }
        precision.push(hits as f64 / (rank + 1) as f64);
        recall.push(hits as f64 / total);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        if precision[i + 1] > precision[i] {
            precision[i] = precision[i + 1];
        }
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for i in 0..precision.len() {
        ap += (recall[i] - prev_recall) * precision[i];
        prev_recall = recall[i];
    }
    Ok(ap)
}
