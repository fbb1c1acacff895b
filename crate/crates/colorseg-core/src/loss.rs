//! The training objective: dynamic color assignment plus pixel-wise log loss.
//!
//! There is no fixed ground-truth coloring. On every step, each instance is
//! assigned whichever foreground color the network already predicts best
//! inside the instance *and* predicts least in a halo around it — so two
//! instances whose halos overlap each other's pixels are pushed toward
//! different colors, while isolated instances are free to share one color.
//! The assignment is recomputed from the current network output every step
//! and then frozen: gradients flow only through the log-loss, never through
//! the argmax.
//!
//! Built from three pieces:
//! * [`compute_halo`] — the margin-`m` neighborhood of an instance, minus
//!   the instance itself (other instances' pixels included, image borders
//!   clip it);
//! * [`assign_color`] — argmax over allowed colors of
//!   `mean ln y[c, instance] + halo_weight * mean ln (1 - y[c, halo])`,
//!   ties broken toward the lowest color index;
//! * [`coloring_step_loss`] — sum over instances of the mean negative
//!   log-probability of the assigned color, plus the plain (unnormalized)
//!   sum of `-ln y[1, p]` over background pixels.
//!
//! Probabilities are clamped to `[LOG_EPS, 1 - LOG_EPS]` inside every log.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::fmath;
use crate::labels::InstanceLabelMap;
use crate::probmap::ColorProbMap;
pub use crate::tensor::tape::LOG_EPS;

/// Neighborhood shape used for halo dilation. `Disc` thresholds Euclidean
/// distance (a margin of 1 reaches the 4-neighborhood); `Square` thresholds
/// Chebyshev distance (margin 1 reaches the 8-neighborhood).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StructuringElement {
    Disc,
    Square,
}

/// Loss meta-parameters. Color 1 is background; foreground colors are
/// 2..=colors. `class_color_sets`, when present, restricts each instance
/// class to its own disjoint set of foreground colors.
#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    pub colors: u8,
    pub margin: f64,
    pub halo_weight: f64,
    pub background_weight: f64,
    pub element: StructuringElement,
    pub class_color_sets: Option<BTreeMap<u16, Vec<u8>>>,
}

impl LossConfig {
    pub fn new(colors: u8, margin: f64, halo_weight: f64) -> LossConfig {
        LossConfig {
            colors,
            margin,
            halo_weight,
            background_weight: 1.0,
            element: StructuringElement::Disc,
            class_color_sets: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.colors < 2 {
            return Err(format!("need at least 2 colors, got {}", self.colors));
        }
        if !self.margin.is_finite() || self.margin < 0.0 {
            return Err(format!("margin must be finite and >= 0, got {}", self.margin));
        }
        if !self.halo_weight.is_finite() || self.halo_weight < 0.0 {
            return Err(format!(
                "halo_weight must be finite and >= 0, got {}",
                self.halo_weight
            ));
        }
        if !self.background_weight.is_finite() || self.background_weight < 0.0 {
            return Err(format!(
                "background_weight must be finite and >= 0, got {}",
                self.background_weight
            ));
        }
        if let Some(sets) = &self.class_color_sets {
            let mut used = vec![false; self.colors as usize + 1];
            for (class, set) in sets {
                if set.is_empty() {
                    return Err(format!("class {class} has an empty color set"));
                }
                for &c in set {
                    if c < 2 || c > self.colors {
                        return Err(format!(
                            "class {class} claims color {c}, outside foreground range 2..={}",
                            self.colors
                        ));
                    }
                    if used[c as usize] {
                        return Err(format!("color {c} appears in more than one class set"));
                    }
                    used[c as usize] = true;
                }
            }
        }
        Ok(())
    }
}

/// Foreground colors instance of class `class` may take. Without a
/// configured partition every foreground color is allowed; with one, the
/// instance's class must be present in it.
pub fn allowed_colors_for(class: Option<u16>, cfg: &LossConfig) -> Result<Vec<u8>, String> {
    match &cfg.class_color_sets {
        None => Ok((2..=cfg.colors).collect()),
        Some(sets) => {
            let cl = class.ok_or_else(|| {
                String::from("class_color_sets configured but instance has no class")
            })?;
            let mut set = sets
                .get(&cl)
                .ok_or_else(|| format!("class {cl} not present in class_color_sets"))?
                .clone();
            set.sort_unstable();
            Ok(set)
        }
    }
}

/// Pixels within `margin` of instance `id` but not part of it, in ascending
/// linear order. Pixels of *other* instances are included; the image border
/// clips the neighborhood. A margin of 0 gives an empty halo.
pub fn compute_halo(
    labels: &InstanceLabelMap,
    id: u16,
    margin: f64,
    element: StructuringElement,
) -> Result<Vec<u32>, String> {
    if id == 0 || id > labels.num_instances() {
        return Err(format!(
            "instance id {id} out of range 1..={}",
            labels.num_instances()
        ));
    }
    if !margin.is_finite() || margin < 0.0 {
        return Err(format!("margin must be finite and >= 0, got {margin}"));
    }
    let (h, w) = (labels.height(), labels.width());
    let reach = fmath::floor(margin) as isize;
    // Offsets of the structuring element, screened by the exact metric.
    let mut offsets = Vec::new();
    for dy in -reach..=reach {
        for dx in -reach..=reach {
            let inside = match element {
                StructuringElement::Disc => {
                    (dy * dy + dx * dx) as f64 <= margin * margin
                }
                StructuringElement::Square => true, // |dy|,|dx| <= reach by loop bounds
            };
            if inside {
                offsets.push((dy, dx));
            }
        }
    }
    let mut near = vec![false; h * w];
    for (i, &v) in labels.ids().iter().enumerate() {
        if v != id {
            continue;
        }
        let (r, c) = ((i / w) as isize, (i % w) as isize);
        for &(dy, dx) in &offsets {
            let (nr, nc) = (r + dy, c + dx);
            if nr >= 0 && nr < h as isize && nc >= 0 && nc < w as isize {
                near[nr as usize * w + nc as usize] = true;
            }
        }
    }
    Ok(near
        .iter()
        .enumerate()
        .filter(|&(i, &n)| n && labels.ids()[i] != id)
        .map(|(i, _)| i as u32)
        .collect())
}

fn ln_clamped(v: f64) -> f64 {
    fmath::ln(v.clamp(LOG_EPS, 1.0 - LOG_EPS))
}

/// The coloring score of one candidate color for one instance:
/// `mean ln y[c, instance] + halo_weight * mean ln (1 - y[c, halo])`.
/// An empty halo contributes nothing.
pub fn color_score(
    y: &ColorProbMap,
    color: u8,
    instance_pixels: &[u32],
    halo_pixels: &[u32],
    halo_weight: f64,
) -> f64 {
    let mut inside = 0.0;
    for &p in instance_pixels {
        inside += ln_clamped(y.prob(color, p));
    }
    inside /= instance_pixels.len() as f64;
    if halo_pixels.is_empty() || halo_weight == 0.0 {
        return inside;
    }
    let mut outside = 0.0;
    for &p in halo_pixels {
        outside += ln_clamped(1.0 - y.prob(color, p));
    }
    inside + halo_weight * outside / halo_pixels.len() as f64
}

/// Picks the allowed color with the highest [`color_score`]; exact ties go
/// to the lowest color index.
pub fn assign_color(
    y: &ColorProbMap,
    instance_pixels: &[u32],
    halo_pixels: &[u32],
    allowed: &[u8],
    halo_weight: f64,
) -> Result<u8, String> {
    if instance_pixels.is_empty() {
        return Err(String::from("cannot assign a color to an empty instance"));
    }
    if allowed.is_empty() {
        return Err(String::from("no allowed colors to assign from"));
    }
    let mut order = allowed.to_vec();
    order.sort_unstable();
    let mut best_color = order[0];
    let mut best_score = f64::NEG_INFINITY;
    for &c in &order {
        if c < 2 || c > y.colors() {
            return Err(format!(
                "allowed color {c} outside foreground range 2..={}",
                y.colors()
            ));
        }
        let s = color_score(y, c, instance_pixels, halo_pixels, halo_weight);
        if s > best_score {
            best_score = s;
            best_color = c;
        }
    }
    Ok(best_color)
}

/// Per-pixel training targets derived from one assignment pass: for every
/// pixel a 0-based channel (`assigned color - 1` on instances, 0 on
/// background) and a weight (`1/|instance|` on instances, the background
/// weight elsewhere). Feeding these to the tape's weighted negative
/// log-likelihood reproduces [`coloring_step_loss`] exactly.
pub struct PixelTargets {
    pub assignment: Vec<u8>,
    pub channels: Vec<u32>,
    pub weights: Vec<f64>,
}

/// Runs halo construction and color assignment for every instance.
/// `classes[id-1]` gives an instance's class when class color sets are in
/// use; pass `None` otherwise.
pub fn coloring_targets(
    y: &ColorProbMap,
    labels: &InstanceLabelMap,
    classes: Option<&[u16]>,
    cfg: &LossConfig,
) -> Result<PixelTargets, String> {
    cfg.validate()?;
    if y.height() != labels.height() || y.width() != labels.width() {
        return Err(format!(
            "probability map is {}x{} but labels are {}x{}",
            y.height(),
            y.width(),
            labels.height(),
            labels.width()
        ));
    }
    if y.colors() != cfg.colors {
        return Err(format!(
            "probability map has {} colors, config says {}",
            y.colors(),
            cfg.colors
        ));
    }
    let k = labels.num_instances() as usize;
    if let Some(cl) = classes {
        if cl.len() != k {
            return Err(format!("{} classes for {k} instances", cl.len()));
        }
    }
    let hw = y.num_pixels();
    let mut channels = vec![0u32; hw];
    let mut weights = vec![cfg.background_weight; hw];
    let mut assignment = Vec::with_capacity(k);
    let instance_pixels = labels.all_instance_pixels();
    for id in 1..=k as u16 {
        let pixels = &instance_pixels[id as usize - 1];
        if pixels.is_empty() {
            return Err(format!("instance {id} has no pixels"));
        }
        let halo = compute_halo(labels, id, cfg.margin, cfg.element)?;
        let allowed = allowed_colors_for(classes.map(|c| c[id as usize - 1]), cfg)?;
        let color = assign_color(y, pixels, &halo, &allowed, cfg.halo_weight)?;
        assignment.push(color);
        let wgt = 1.0 / pixels.len() as f64;
        for &p in pixels {
            channels[p as usize] = color as u32 - 1;
            weights[p as usize] = wgt;
        }
    }
    Ok(PixelTargets {
        assignment,
        channels,
        weights,
    })
}

/// Weighted pixel NLL given explicit targets — the same sum, in the same
/// row-major order and with the same clamping, as the tape op.
pub fn pixel_nll(y: &ColorProbMap, channels: &[u32], weights: &[f64]) -> f64 {
    let hw = y.num_pixels();
    let data = y.data();
    let mut acc = 0.0;
    for p in 0..hw {
        acc -= weights[p] * ln_clamped(data[channels[p] as usize * hw + p]);
    }
    acc
}

/// The full training loss for one image: assigns colors, then sums the mean
/// negative log-probability of each instance's assigned color and the plain
/// sum of `-ln y[1]` over background. Returns the loss and the per-instance
/// assignment (index `id - 1`).
pub fn coloring_step_loss(
    y: &ColorProbMap,
    labels: &InstanceLabelMap,
    classes: Option<&[u16]>,
    cfg: &LossConfig,
) -> Result<(f64, Vec<u8>), String> {
    let targets = coloring_targets(y, labels, classes, cfg)?;
    let loss = pixel_nll(y, &targets.channels, &targets.weights);
    Ok((loss, targets.assignment))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    /// Builds a map from a per-pixel probability vector.
    fn flat_map(
        colors: u8,
        h: usize,
        w: usize,
        fill: &mut dyn FnMut(usize) -> Vec<f64>,
    ) -> ColorProbMap {
        let hw = h * w;
        let mut data = vec![0.0; colors as usize * hw];
        for p in 0..hw {
            let probs = fill(p);
            assert_eq!(probs.len(), colors as usize);
            for (c, v) in probs.iter().enumerate() {
                data[c * hw + p] = *v;
            }
        }
        ColorProbMap::new(colors, h, w, data).unwrap()
    }

    fn softmax_random(colors: u8, h: usize, w: usize, rng: &mut Rng) -> ColorProbMap {
        flat_map(colors, h, w, &mut |_| {
            let logits: Vec<f64> = (0..colors).map(|_| rng.range(-2.0, 2.0)).collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = exps.iter().sum();
            exps.iter().map(|e| e / s).collect()
        })
    }

    /// Random contiguous label map made of axis-aligned rectangles.
    fn random_labels(rng: &mut Rng, h: usize, w: usize, max_k: usize) -> InstanceLabelMap {
        loop {
            let mut ids = vec![0u16; h * w];
            let k = rng.int_in(1, max_k as u64) as u16;
            for id in 1..=k {
                let rh = rng.int_in(1, (h / 2) as u64) as usize;
                let rw = rng.int_in(1, (w / 2) as u64) as usize;
                let r0 = rng.below((h - rh) as u64 + 1) as usize;
                let c0 = rng.below((w - rw) as u64 + 1) as usize;
                for r in r0..r0 + rh {
                    for c in c0..c0 + rw {
                        ids[r * w + c] = id;
                    }
                }
            }
            // Later rectangles can bury earlier ones; compact the survivors.
            let mut present: Vec<u16> = ids.iter().copied().filter(|&v| v > 0).collect();
            present.sort_unstable();
            present.dedup();
            let remap: alloc::collections::BTreeMap<u16, u16> = present
                .iter()
                .enumerate()
                .map(|(i, &v)| (v, i as u16 + 1))
                .collect();
            for v in &mut ids {
                if *v > 0 {
                    *v = remap[v];
                }
            }
            if !present.is_empty() {
                return InstanceLabelMap::new(h, w, ids).unwrap();
            }
        }
    }

    #[test]
    fn zero_margin_halo_is_empty() {
        let labels = InstanceLabelMap::new(3, 3, vec![0, 0, 0, 0, 1, 0, 0, 0, 0]).unwrap();
        let halo = compute_halo(&labels, 1, 0.0, StructuringElement::Disc).unwrap();
        assert!(halo.is_empty());
    }

    #[test]
    fn unit_margin_matches_neighborhoods() {
        // Single pixel at the center of 5x5: index 12.
        let mut ids = vec![0u16; 25];
        ids[12] = 1;
        let labels = InstanceLabelMap::new(5, 5, ids).unwrap();
        let disc = compute_halo(&labels, 1, 1.0, StructuringElement::Disc).unwrap();
        assert_eq!(disc, vec![7, 11, 13, 17]); // 4-neighborhood
        let square = compute_halo(&labels, 1, 1.0, StructuringElement::Square).unwrap();
        assert_eq!(square, vec![6, 7, 8, 11, 13, 16, 17, 18]); // 8-neighborhood
    }

    #[test]
    fn halo_is_clipped_at_borders() {
        let mut ids = vec![0u16; 9];
        ids[0] = 1; // top-left corner of 3x3
        let labels = InstanceLabelMap::new(3, 3, ids).unwrap();
        let halo = compute_halo(&labels, 1, 1.0, StructuringElement::Disc).unwrap();
        assert_eq!(halo, vec![1, 3]);
    }

    #[test]
    fn halo_includes_other_instances_pixels() {
        // Instance 1 at (1,1), instance 2 right next to it at (1,2).
        let ids = vec![0, 0, 0, 0, 0, 1, 2, 0, 0, 0, 0, 0, 0, 0, 0, 0];
        let labels = InstanceLabelMap::new(4, 4, ids).unwrap();
        let halo = compute_halo(&labels, 1, 1.0, StructuringElement::Disc).unwrap();
        assert!(halo.contains(&6), "neighbor instance pixel belongs to the halo");
    }

    #[test]
    fn halo_rejects_bad_ids() {
        let labels = InstanceLabelMap::new(2, 2, vec![0, 1, 0, 0]).unwrap();
        assert!(compute_halo(&labels, 0, 1.0, StructuringElement::Disc).is_err());
        assert!(compute_halo(&labels, 2, 1.0, StructuringElement::Disc).is_err());
    }

    /// Brute-force oracle: a pixel is halo iff it is not the instance and
    /// its minimum metric distance to any instance pixel is <= margin.
    fn halo_oracle(
        labels: &InstanceLabelMap,
        id: u16,
        margin: f64,
        element: StructuringElement,
    ) -> Vec<u32> {
        let (h, w) = (labels.height(), labels.width());
        let mut out = Vec::new();
        for p in 0..h * w {
            if labels.ids()[p] == id {
                continue;
            }
            let (pr, pc) = ((p / w) as f64, (p % w) as f64);
            let mut near = false;
            for q in 0..h * w {
                if labels.ids()[q] != id {
                    continue;
                }
                let (qr, qc) = ((q / w) as f64, (q % w) as f64);
                let d = match element {
                    StructuringElement::Disc => {
                        ((pr - qr).powi(2) + (pc - qc).powi(2)).sqrt()
                    }
                    StructuringElement::Square => (pr - qr).abs().max((pc - qc).abs()),
                };
                if d <= margin {
                    near = true;
                    break;
                }
            }
            if near {
                out.push(p as u32);
            }
        }
        out
    }

    #[test]
    fn halo_matches_bruteforce_on_random_maps() {
        let mut rng = Rng::new(314);
        for trial in 0..25 {
            let h = rng.int_in(4, 14) as usize;
            let w = rng.int_in(4, 14) as usize;
            let labels = random_labels(&mut rng, h, w, 4);
            let margin = [0.0, 1.0, 2.0, 2.5, 4.0][rng.below(5) as usize];
            let element = if rng.coin(0.5) {
                StructuringElement::Disc
            } else {
                StructuringElement::Square
            };
            for id in 1..=labels.num_instances() {
                let got = compute_halo(&labels, id, margin, element).unwrap();
                let want = halo_oracle(&labels, id, margin, element);
                assert_eq!(got, want, "trial {trial}, id {id}, margin {margin}, {element:?}");
            }
        }
    }

    #[test]
    fn two_colors_leave_no_choice() {
        let y = flat_map(2, 2, 2, &mut |_| vec![0.5, 0.5]);
        let c = assign_color(&y, &[0, 1], &[], &[2], 0.0).unwrap();
        assert_eq!(c, 2);
    }

    #[test]
    fn concentrated_probability_wins_without_halo() {
        // Color 3 carries the mass inside the instance (pixels 0, 1).
        let y = flat_map(4, 1, 4, &mut |p| {
            if p < 2 {
                vec![0.1, 0.1, 0.7, 0.1]
            } else {
                vec![0.7, 0.1, 0.1, 0.1]
            }
        });
        let c = assign_color(&y, &[0, 1], &[2, 3], &[2, 3, 4], 0.0).unwrap();
        assert_eq!(c, 3);
    }

    #[test]
    fn ties_break_to_lowest_color() {
        let y = flat_map(5, 1, 3, &mut |_| vec![0.2; 5]);
        let c = assign_color(&y, &[0, 1], &[2], &[4, 2, 3], 4.0).unwrap();
        assert_eq!(c, 2, "uniform probabilities tie every score");
    }

    #[test]
    fn halo_pressure_flips_the_choice() {
        // Inside pixels score colors 2 and 3 equally; the halo pixel is
        // strongly color 3, so the halo term penalizes 3.
        let y = flat_map(3, 1, 3, &mut |p| match p {
            0 | 1 => vec![0.2, 0.4, 0.4],
            _ => vec![0.05, 0.05, 0.9],
        });
        let without = assign_color(&y, &[0, 1], &[2], &[2, 3], 0.0).unwrap();
        assert_eq!(without, 2, "tie at mu=0 breaks low");
        let with = assign_color(&y, &[0, 1], &[2], &[2, 3], 4.0).unwrap();
        assert_eq!(with, 2);
        // And the score of the crowded color strictly drops when the halo
        // term is on.
        let s0 = color_score(&y, 3, &[0, 1], &[2], 0.0);
        let s4 = color_score(&y, 3, &[0, 1], &[2], 4.0);
        assert!(s4 < s0);
    }

    /// Independent exhaustive evaluation of the assignment rule.
    fn assign_oracle(
        y: &ColorProbMap,
        pixels: &[u32],
        halo: &[u32],
        allowed: &[u8],
        mu: f64,
    ) -> u8 {
        let mut best = (f64::NEG_INFINITY, 0u8);
        let mut sorted = allowed.to_vec();
        sorted.sort_unstable();
        for &c in &sorted {
            let mi: f64 = pixels
                .iter()
                .map(|&p| y.prob(c, p).clamp(LOG_EPS, 1.0 - LOG_EPS).ln())
                .sum::<f64>()
                / pixels.len() as f64;
            let mh: f64 = if halo.is_empty() {
                0.0
            } else {
                halo.iter()
                    .map(|&p| (1.0 - y.prob(c, p)).clamp(LOG_EPS, 1.0 - LOG_EPS).ln())
                    .sum::<f64>()
                    / halo.len() as f64
            };
            let s = mi + mu * mh;
            if s > best.0 {
                best = (s, c);
            }
        }
        best.1
    }

    #[test]
    fn assignment_matches_exhaustive_oracle() {
        let mut rng = Rng::new(2718);
        for trial in 0..40 {
            let (h, w) = (6, 6);
            let y = softmax_random(5, h, w, &mut rng);
            let labels = random_labels(&mut rng, h, w, 3);
            let mu = [0.0, 1.0, 7.0][rng.below(3) as usize];
            for id in 1..=labels.num_instances() {
                let pixels = labels.pixels_of(id);
                let halo = compute_halo(&labels, id, 2.0, StructuringElement::Disc).unwrap();
                let got = assign_color(&y, &pixels, &halo, &[2, 3, 4, 5], mu).unwrap();
                let want = assign_oracle(&y, &pixels, &halo, &[2, 3, 4, 5], mu);
                assert_eq!(got, want, "trial {trial} id {id} mu {mu}");
            }
        }
    }

    #[test]
    fn allowed_colors_default_is_all_foreground() {
        let cfg = LossConfig::new(6, 2.0, 1.0);
        assert_eq!(allowed_colors_for(None, &cfg).unwrap(), vec![2, 3, 4, 5, 6]);
    }

    #[test]
    fn class_partition_restricts_and_validates() {
        let mut cfg = LossConfig::new(6, 2.0, 1.0);
        let mut sets = BTreeMap::new();
        sets.insert(1u16, vec![2u8, 3]);
        sets.insert(2u16, vec![4u8, 5, 6]);
        cfg.class_color_sets = Some(sets);
        cfg.validate().unwrap();
        assert_eq!(allowed_colors_for(Some(2), &cfg).unwrap(), vec![4, 5, 6]);
        assert!(allowed_colors_for(Some(9), &cfg).is_err());
        assert!(allowed_colors_for(None, &cfg).is_err());

        // Overlapping sets are rejected.
        let mut bad = BTreeMap::new();
        bad.insert(1u16, vec![2u8, 3]);
        bad.insert(2u16, vec![3u8]);
        cfg.class_color_sets = Some(bad);
        assert!(cfg.validate().is_err());
        // Background color in a set is rejected.
        let mut bad2 = BTreeMap::new();
        bad2.insert(1u16, vec![1u8, 2]);
        cfg.class_color_sets = Some(bad2);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn perfect_prediction_costs_nearly_nothing() {
        // Instance occupies pixels 0..2 on a 1x4 strip; one-hot prediction
        // of color 2 there and background elsewhere.
        let labels = InstanceLabelMap::new(1, 4, vec![1, 1, 0, 0]).unwrap();
        let y = flat_map(3, 1, 4, &mut |p| {
            if p < 2 {
                vec![0.0, 1.0, 0.0]
            } else {
                vec![1.0, 0.0, 0.0]
            }
        });
        let cfg = LossConfig::new(3, 1.0, 1.0);
        let (loss, assignment) = coloring_step_loss(&y, &labels, None, &cfg).unwrap();
        assert!(loss < 4.0 * 1e-6, "loss {loss}");
        assert_eq!(assignment, vec![2]);
    }

    #[test]
    fn all_background_uniform_loss_is_area_times_log_c() {
        let (h, w) = (5, 7);
        let labels = InstanceLabelMap::empty(h, w);
        let y = flat_map(4, h, w, &mut |_| vec![0.25; 4]);
        let cfg = LossConfig::new(4, 2.0, 1.0);
        let (loss, assignment) = coloring_step_loss(&y, &labels, None, &cfg).unwrap();
        assert!(assignment.is_empty());
        let want = (h * w) as f64 * 4.0f64.ln();
        assert!((loss - want).abs() < 1e-9, "{loss} vs {want}");
    }

    #[test]
    fn loss_matches_direct_formula_evaluation() {
        let mut rng = Rng::new(99);
        for _ in 0..20 {
            let (h, w) = (8, 8);
            let y = softmax_random(4, h, w, &mut rng);
            let labels = random_labels(&mut rng, h, w, 2);
            let cfg = LossConfig::new(4, 2.0, 3.0);
            let (loss, assignment) = coloring_step_loss(&y, &labels, None, &cfg).unwrap();

            // Direct evaluation: per-instance means, then the background sum.
            let mut want = 0.0;
            for id in 1..=labels.num_instances() {
                let pixels = labels.pixels_of(id);
                let c = assignment[id as usize - 1];
                let mean: f64 = pixels
                    .iter()
                    .map(|&p| y.prob(c, p).clamp(LOG_EPS, 1.0 - LOG_EPS).ln())
                    .sum::<f64>()
                    / pixels.len() as f64;
                want -= mean;
            }
            for &p in &labels.background_pixels() {
                want -= y.prob(1, p).clamp(LOG_EPS, 1.0 - LOG_EPS).ln();
            }
            let scale = want.abs().max(1.0);
            assert!((loss - want).abs() / scale < 1e-12, "{loss} vs {want}");
        }
    }

    #[test]
    fn loss_drops_when_mass_moves_toward_assigned_color() {
        let mut rng = Rng::new(7);
        let (h, w) = (6, 6);
        let mut y = softmax_random(4, h, w, &mut rng);
        let labels = random_labels(&mut rng, h, w, 2);
        let cfg = LossConfig::new(4, 1.0, 2.0);
        let targets = coloring_targets(&y, &labels, None, &cfg).unwrap();
        let before = pixel_nll(&y, &targets.channels, &targets.weights);
        // Move probability mass toward the assigned color on one instance
        // pixel, holding the assignment frozen.
        let p = labels.pixels_of(1)[0] as usize;
        let hw = h * w;
        let tgt = targets.channels[p] as usize;
        // Halve every other color at that pixel and hand the mass to the
        // assigned one; the pixel still sums to 1.
        let freed = 0.5 * (1.0 - y.data()[tgt * hw + p]);
        for c in 0..4 {
            let v = &mut y.data_mut()[c * hw + p];
            if c == tgt {
                *v += freed;
            } else {
                *v *= 0.5;
            }
        }
        let after = pixel_nll(&y, &targets.channels, &targets.weights);
        assert!(after < before, "{after} vs {before}");
    }

    #[test]
    fn mismatched_shapes_are_rejected() {
        let labels = InstanceLabelMap::empty(4, 4);
        let y = flat_map(3, 4, 5, &mut |_| vec![0.4, 0.3, 0.3]);
        let cfg = LossConfig::new(3, 1.0, 1.0);
        assert!(coloring_step_loss(&y, &labels, None, &cfg).is_err());
        let y2 = flat_map(4, 4, 4, &mut |_| vec![0.25; 4]);
        assert!(coloring_step_loss(&y2, &labels, None, &cfg).is_err());
    }
}
