//! From a color probability map to discrete instances.
//!
//! Pipeline (see [`segment`]): per-pixel argmax → connected components of
//! each foreground color → drop components below a size threshold → merge
//! same-color components closer than a radius → score survivors by their
//! mean assigned-color probability. Background (color 1) never forms
//! instances. Every stage is deterministic: components are created and
//! reported in ascending order of their smallest pixel index, and geometric
//! comparisons use squared integer distances wherever possible.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::fmath;
use crate::labels::InstanceLabelMap;
use crate::probmap::ColorProbMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

/// Distance between two pixel sets used by the merge stage.
/// `MinSetDistance` is the closest-pair distance (merging is idempotent
/// under it); `Hausdorff` is the symmetric Hausdorff distance (a merged
/// component can be wider than either part, so re-running can merge more).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MergeMetric {
    MinSetDistance,
    Hausdorff,
}

#[derive(Clone, Debug)]
pub struct PostConfig {
    /// Components with fewer pixels than this are dropped (0 keeps all).
    pub size_threshold: usize,
    /// Same-color components closer than this merge (0 merges nothing).
    pub merge_radius: f64,
    pub merge_metric: MergeMetric,
    pub connectivity: Connectivity,
}

impl Default for PostConfig {
    fn default() -> PostConfig {
        PostConfig {
            size_threshold: 0,
            merge_radius: 0.0,
            merge_metric: MergeMetric::MinSetDistance,
            connectivity: Connectivity::Four,
        }
    }
}

impl PostConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !self.merge_radius.is_finite() || self.merge_radius < 0.0 {
            return Err(format!(
                "merge_radius must be finite and >= 0, got {}",
                self.merge_radius
            ));
        }
        Ok(())
    }
}

/// Argmax coloring of a probability map; colors are 1-based and ties go to
/// the lowest color.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HardColorMap {
    height: usize,
    width: usize,
    colors: Vec<u8>,
}

impl HardColorMap {
    pub fn new(height: usize, width: usize, colors: Vec<u8>) -> Result<HardColorMap, String> {
        if colors.len() != height * width {
            return Err(format!(
                "{}x{} map needs {} entries, got {}",
                height,
                width,
                height * width,
                colors.len()
            ));
        }
        if let Some(&bad) = colors.iter().find(|&&c| c == 0) {
            let _ = bad;
            return Err(String::from("hard color map entries are 1-based"));
        }
        Ok(HardColorMap {
            height,
            width,
            colors,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn colors(&self) -> &[u8] {
        &self.colors
    }
}

pub fn hard_assign(y: &ColorProbMap) -> HardColorMap {
    let hw = y.num_pixels();
    let data = y.data();
    let mut colors = vec![1u8; hw];
    for p in 0..hw {
        let mut best_c = 1u8;
        let mut best_v = data[p];
        for c in 2..=y.colors() {
            let v = data[(c as usize - 1) * hw + p];
            if v > best_v {
                best_v = v;
                best_c = c;
            }
        }
        colors[p] = best_c;
    }
    HardColorMap {
        height: y.height(),
        width: y.width(),
        colors,
    }
}

/// One connected set of same-colored foreground pixels. `pixels` is sorted
/// ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Component {
    pub color: u8,
    pub pixels: Vec<u32>,
}

/// Union-find whose representative is always the smallest member, making
/// component identities independent of union order.
struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new(n: usize) -> DisjointSet {
        DisjointSet {
            parent: (0..n as u32).collect(),
        }
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize]; // path halving
            x = self.parent[x as usize];
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi as usize] = lo;
    }
}

/// Connected components of every foreground color (color 1 is skipped),
/// ordered by smallest pixel index.
pub fn connected_components(z: &HardColorMap, connectivity: Connectivity) -> Vec<Component> {
    let (h, w) = (z.height, z.width);
    let colors = &z.colors;
    let mut ds = DisjointSet::new(h * w);
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if colors[i] == 1 {
                continue;
            }
            // Union with already-visited neighbors of the same color.
            if c > 0 && colors[i - 1] == colors[i] {
                ds.union(i as u32, (i - 1) as u32);
            }
            if r > 0 {
                if colors[i - w] == colors[i] {
                    ds.union(i as u32, (i - w) as u32);
                }
                if connectivity == Connectivity::Eight {
                    if c > 0 && colors[i - w - 1] == colors[i] {
                        ds.union(i as u32, (i - w - 1) as u32);
                    }
                    if c + 1 < w && colors[i - w + 1] == colors[i] {
                        ds.union(i as u32, (i - w + 1) as u32);
                    }
                }
            }
        }
    }
    // Roots are the smallest pixel of each component, so scanning pixels in
    // order yields components ordered by smallest member.
    let mut slot = vec![u32::MAX; h * w];
    let mut out: Vec<Component> = Vec::new();
    for i in 0..h * w {
        if colors[i] == 1 {
            continue;
        }
        let root = ds.find(i as u32) as usize;
        if slot[root] == u32::MAX {
            slot[root] = out.len() as u32;
            out.push(Component {
                color: colors[root],
                pixels: Vec::new(),
            });
        }
        out[slot[root] as usize].pixels.push(i as u32);
    }
    out
}

/// Keeps components with at least `size_threshold` pixels; also returns the
/// pixels of the dropped ones (ascending).
pub fn filter_small(
    components: Vec<Component>,
    size_threshold: usize,
) -> (Vec<Component>, Vec<u32>) {
    let mut kept = Vec::with_capacity(components.len());
    let mut dropped = Vec::new();
    for comp in components {
        if comp.pixels.len() >= size_threshold {
            kept.push(comp);
        } else {
            dropped.extend_from_slice(&comp.pixels);
        }
    }
    dropped.sort_unstable();
    (kept, dropped)
}

fn min_pair_dist2(a: &[u32], b: &[u32], w: usize) -> u64 {
    let mut best = u64::MAX;
    for &pa in a {
        let (ra, ca) = ((pa as usize / w) as i64, (pa as usize % w) as i64);
        for &pb in b {
            let (rb, cb) = ((pb as usize / w) as i64, (pb as usize % w) as i64);
            let d2 = ((ra - rb) * (ra - rb) + (ca - cb) * (ca - cb)) as u64;
            if d2 < best {
                best = d2;
                if best == 0 {
                    return 0;
                }
            }
        }
    }
    best
}

fn directed_hausdorff2(a: &[u32], b: &[u32], w: usize) -> u64 {
    let mut worst = 0u64;
    for &pa in a {
        let (ra, ca) = ((pa as usize / w) as i64, (pa as usize % w) as i64);
        let mut best = u64::MAX;
        for &pb in b {
            let (rb, cb) = ((pb as usize / w) as i64, (pb as usize % w) as i64);
            let d2 = ((ra - rb) * (ra - rb) + (ca - cb) * (ca - cb)) as u64;
            if d2 < best {
                best = d2;
            }
        }
        if best > worst {
            worst = best;
        }
    }
    worst
}

/// Squared set distance under the configured metric. Exact in integers, so
/// callers can reproduce the merge comparison `d² < radius²` bit-for-bit.
pub fn set_dist2(a: &[u32], b: &[u32], w: usize, metric: MergeMetric) -> u64 {
    match metric {
        MergeMetric::MinSetDistance => min_pair_dist2(a, b, w),
        MergeMetric::Hausdorff => {
            directed_hausdorff2(a, b, w).max(directed_hausdorff2(b, a, w))
        }
    }
}

/// Transitively merges same-color components whose distance is strictly
/// below `radius`. Distances are evaluated between the *original*
/// components; the transitive closure is then taken, so chains merge even
/// when their endpoints are far apart. `width` is the image width the pixel
/// indices refer to.
pub fn merge_nearby(
    components: Vec<Component>,
    radius: f64,
    metric: MergeMetric,
    width: usize,
) -> Vec<Component> {
    let n = components.len();
    if radius <= 0.0 || n < 2 {
        return components;
    }
    // d < radius  ⟺  d² < radius² with both sides exact: d² is integral.
    let r2 = radius * radius;
    let mut ds = DisjointSet::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if components[i].color != components[j].color {
                continue;
            }
            let d2 = set_dist2(&components[i].pixels, &components[j].pixels, width, metric);
            if (d2 as f64) < r2 {
                ds.union(i as u32, j as u32);
            }
        }
    }
    let mut slot = vec![u32::MAX; n];
    let mut merged: Vec<Component> = Vec::new();
    for (i, comp) in components.into_iter().enumerate() {
        let root = ds.find(i as u32) as usize;
        if slot[root] == u32::MAX {
            slot[root] = merged.len() as u32;
            merged.push(Component {
                color: comp.color,
                pixels: Vec::new(),
            });
        }
        merged[slot[root] as usize].pixels.extend_from_slice(&comp.pixels);
    }
    for comp in &mut merged {
        comp.pixels.sort_unstable();
    }
    // Components arrive ordered by smallest pixel and the root of a merge
    // group is its earliest member, so the order invariant survives.
    merged
}

/// A final instance: its pixels, its color, and a confidence equal to the
/// mean predicted probability of that color over the pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredInstance {
    pub color: u8,
    pub pixels: Vec<u32>,
    pub confidence: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceSet {
    pub height: usize,
    pub width: usize,
    pub instances: Vec<ScoredInstance>,
}

pub fn score_instances(
    components: Vec<Component>,
    y: &ColorProbMap,
) -> Result<Vec<ScoredInstance>, String> {
    let mut out = Vec::with_capacity(components.len());
    for comp in components {
        if comp.pixels.is_empty() {
            return Err(String::from("cannot score an empty component"));
        }
        let mut acc = 0.0;
        for &p in &comp.pixels {
            acc += y.prob(comp.color, p);
        }
        out.push(ScoredInstance {
            color: comp.color,
            confidence: acc / comp.pixels.len() as f64,
            pixels: comp.pixels,
        });
    }
    Ok(out)
}

/// The whole pipeline. Validates the probability map (rows must be finite,
/// non-negative, summing to 1 within 1e-6) and the config.
pub fn segment(y: &ColorProbMap, cfg: &PostConfig) -> Result<InstanceSet, String> {
    cfg.validate()?;
    y.validate(1e-6)?;
    let hard = hard_assign(y);
    let comps = connected_components(&hard, cfg.connectivity);
    let (kept, _dropped) = filter_small(comps, cfg.size_threshold);
    let merged = merge_nearby(kept, cfg.merge_radius, cfg.merge_metric, y.width());
    let instances = score_instances(merged, y)?;
    Ok(InstanceSet {
        height: y.height(),
        width: y.width(),
        instances,
    })
}

impl InstanceSet {
    /// Renders the instances as a label map, ids following instance order.
    /// Fails if instances overlap or there are more than 65535 of them.
    pub fn to_label_map(&self) -> Result<InstanceLabelMap, String> {
        if self.instances.len() > u16::MAX as usize {
            return Err(format!("{} instances overflow u16 ids", self.instances.len()));
        }
        let mut ids = vec![0u16; self.height * self.width];
        for (i, inst) in self.instances.iter().enumerate() {
            for &p in &inst.pixels {
                let slot = &mut ids[p as usize];
                if *slot != 0 {
                    return Err(format!("pixel {p} belongs to two instances"));
                }
                *slot = i as u16 + 1;
            }
        }
        InstanceLabelMap::new(self.height, self.width, ids)
    }
}

/// Convenience: distance between two components in pixels (not squared),
/// under the given metric. Exposed for parameter sweeps and tests.
pub fn component_distance(a: &[u32], b: &[u32], width: usize, metric: MergeMetric) -> f64 {
    fmath::sqrt(set_dist2(a, b, width, metric) as f64)
}
