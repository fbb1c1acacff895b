//! Grid search over postprocessing thresholds (component size τ, merge
//! radius ρ) against ground truth, on cached per-image segmentations.
//!
//! The expensive parts — the forward pass, the argmax, connected
//! components, and all pairwise component distances — depend only on the
//! probability maps, so they are computed once per image. Each grid point
//! then just filters the cached components by size and replays the merge
//! rule (`d² < ρ²`, distances between original components, transitive
//! closure) on the cached integer distance matrix, which reproduces the
//! full pipeline bit-for-bit.

use colorseg_core::labels::InstanceLabelMap;
use colorseg_core::metrics::{count_difference, symmetric_best_dice};
use colorseg_core::postprocess::{
    connected_components, hard_assign, set_dist2, Component, Connectivity, MergeMetric,
};
use colorseg_core::probmap::ColorProbMap;

use crate::error::{CliError, Result};

pub struct SweepImage {
    components: Vec<Component>,
    /// Row-major n×n squared distances between original components;
    /// `u64::MAX` marks cross-color pairs (never merged).
    dist2: Vec<u64>,
    gt_sets: Vec<Vec<u32>>,
    gt_count: usize,
}

pub fn prepare_image(
    y: &ColorProbMap,
    gt: &InstanceLabelMap,
    connectivity: Connectivity,
    metric: MergeMetric,
) -> Result<SweepImage> {
    if y.height() != gt.height() || y.width() != gt.width() {
        return Err(CliError::Shape(format!(
            "prediction is {}x{} but ground truth is {}x{}",
            y.height(),
            y.width(),
            gt.height(),
            gt.width()
        )));
    }
    let z = hard_assign(y);
    let components = connected_components(&z, connectivity);
    let n = components.len();
    let mut dist2 = vec![u64::MAX; n * n];
    for i in 0..n {
        for j in i + 1..n {
            if components[i].color != components[j].color {
                continue;
            }
            let d2 = set_dist2(
                &components[i].pixels,
                &components[j].pixels,
                y.width(),
                metric,
            );
            dist2[i * n + j] = d2;
            dist2[j * n + i] = d2;
        }
    }
    Ok(SweepImage {
        components,
        dist2,
        gt_sets: gt.all_instance_pixels(),
        gt_count: gt.num_instances() as usize,
    })
}

/// Predicted instance pixel sets at one grid point: drop components smaller
/// than `tau`, then transitively merge same-color survivors whose cached
/// distance satisfies `d² < rho²`.
pub fn predicted_sets(img: &SweepImage, tau: usize, rho: f64) -> Vec<Vec<u32>> {
    let n = img.components.len();
    let kept: Vec<usize> = (0..n)
        .filter(|&i| img.components[i].pixels.len() >= tau)
        .collect();
    let k = kept.len();
    // Union-find over kept components; root = smallest index, so groups
    // come out ordered by their earliest member, like the full pipeline.
    let mut parent: Vec<usize> = (0..k).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let r2 = rho * rho;
    if rho > 0.0 {
        for a in 0..k {
            for b in a + 1..k {
                let d2 = img.dist2[kept[a] * n + kept[b]];
                if d2 != u64::MAX && (d2 as f64) < r2 {
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    if ra != rb {
                        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
                        parent[hi] = lo;
                    }
                }
            }
        }
    }
    let mut slot = vec![usize::MAX; k];
    let mut out: Vec<Vec<u32>> = Vec::new();
    for a in 0..k {
        let root = find(&mut parent, a);
        if slot[root] == usize::MAX {
            slot[root] = out.len();
            out.push(Vec::new());
        }
        out[slot[root]].extend_from_slice(&img.components[kept[a]].pixels);
    }
    for set in &mut out {
        set.sort_unstable();
    }
    out
}

#[derive(Clone, Copy, Debug)]
pub struct SweepPoint {
    pub tau: usize,
    pub rho: f64,
    /// Mean symmetric best dice over the images.
    pub sbd: f64,
    /// Mean absolute difference between predicted and true instance counts.
    pub dic: f64,
}

pub struct SweepResult {
    /// All grid points, τ-major then ρ, in the order given.
    pub points: Vec<SweepPoint>,
    /// Index of the winning point in `points`.
    pub best: usize,
}

/// Higher SBD wins; ties prefer the smaller radius, then the smaller size
/// threshold (the least aggressive postprocessing that achieves the score).
fn better(a: &SweepPoint, b: &SweepPoint) -> bool {
    if a.sbd != b.sbd {
        return a.sbd > b.sbd;
    }
    if a.rho != b.rho {
        return a.rho < b.rho;
    }
    a.tau < b.tau
}

pub fn run_sweep(images: &[SweepImage], taus: &[usize], rhos: &[f64]) -> Result<SweepResult> {
    if images.is_empty() {
        return Err(CliError::Data("sweep needs at least one image".into()));
    }
    if taus.is_empty() || rhos.is_empty() {
        return Err(CliError::Config("sweep grid is empty".into()));
    }
    let mut points = Vec::with_capacity(taus.len() * rhos.len());
    for &tau in taus {
        for &rho in rhos {
            if !(rho >= 0.0) {
                return Err(CliError::Config(format!("rho must be >= 0, got {rho}")));
            }
            let mut sbd_sum = 0.0;
            let mut dic_sum = 0.0;
            for img in images {
                let pred = predicted_sets(img, tau, rho);
                sbd_sum += symmetric_best_dice(&pred, &img.gt_sets);
                dic_sum += count_difference(pred.len(), img.gt_count) as f64;
            }
            points.push(SweepPoint {
                tau,
                rho,
                sbd: sbd_sum / images.len() as f64,
                dic: dic_sum / images.len() as f64,
            });
        }
    }
    let mut best = 0;
    for (i, p) in points.iter().enumerate().skip(1) {
        if better(p, &points[best]) {
            best = i;
        }
    }
    Ok(SweepResult { points, best })
}
