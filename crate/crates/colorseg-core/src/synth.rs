//! Procedural training scenes with exact instance labels.
//!
//! Three families:
//! * `Blobs` — filled ellipses with additive intensity; later blobs occlude
//!   earlier ones in the label map when overlap is allowed;
//! * `Rods` — thick line segments (capsules); when overlap is allowed, some
//!   rods are deliberately laid parallel against an earlier rod so that
//!   instances touch;
//! * `Occluded` — well-separated blobs crossed by one or two background
//!   bars that cut right through them, guaranteeing at least one instance
//!   whose pixels are disconnected.
//!
//! `generate(cfg, index)` is pure: sample `index` of a config is the same
//! bytes on every call and every build. Each sample draws from its own RNG
//! stream, so samples can be produced in any order.
//!
//! [`augment`] applies a random rotation, flips, and a crop, resampling
//! nearest-neighbor so labels stay crisp; instance ids that leave the frame
//! are compacted away.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::fmath;
use crate::image::Image;
use crate::labels::InstanceLabelMap;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SceneKind {
    Blobs,
    Rods,
    Occluded,
}

#[derive(Clone, Debug)]
pub struct SceneConfig {
    pub kind: SceneKind,
    pub height: usize,
    pub width: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    /// Size range: ellipse semi-axes for blobs, half-length for rods.
    pub min_size: f64,
    pub max_size: f64,
    /// Whether instances may touch/overlap. Blobs overlap shallowly with
    /// the later one on top; rods get parallel touching neighbors.
    pub allow_overlap: bool,
    /// Minimum separation (pixels, between bounding circles) when overlap
    /// is off.
    pub min_gap: f64,
    /// Standard deviation of additive Gaussian pixel noise (0 = clean).
    pub noise: f64,
    /// Image channels: 1 (gray) or 3.
    pub channels: usize,
    pub seed: u64,
}

impl SceneConfig {
    pub fn blobs(height: usize, width: usize) -> SceneConfig {
        SceneConfig {
            kind: SceneKind::Blobs,
            height,
            width,
            min_instances: 3,
            max_instances: 8,
            min_size: 3.0,
            max_size: 7.0,
            allow_overlap: true,
            min_gap: 1.0,
            noise: 0.03,
            channels: 1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.height < 8 || self.width < 8 {
            return Err(format!("scene must be at least 8x8, got {}x{}", self.height, self.width));
        }
        if self.min_instances == 0 || self.min_instances > self.max_instances {
            return Err(format!(
                "instance range {}..={} is invalid",
                self.min_instances, self.max_instances
            ));
        }
        if !(self.min_size > 0.0 && self.min_size <= self.max_size && self.max_size.is_finite()) {
            return Err(format!(
                "size range {}..={} is invalid",
                self.min_size, self.max_size
            ));
        }
        // Shapes reach at most max_size (+ thickness for rods) from their
        // center and centers must have room on both sides.
        if 2.0 * self.max_size + 8.0 >= self.height.min(self.width) as f64 {
            return Err(format!(
                "max_size {} does not fit a {}x{} scene",
                self.max_size, self.height, self.width
            ));
        }
        if !self.min_gap.is_finite() || self.min_gap < 0.0 {
            return Err(format!("min_gap must be finite and >= 0, got {}", self.min_gap));
        }
        if !self.noise.is_finite() || self.noise < 0.0 {
            return Err(format!("noise must be finite and >= 0, got {}", self.noise));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(format!("channels must be 1 or 3, got {}", self.channels));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Sample {
    pub image: Image,
    pub labels: InstanceLabelMap,
}

/// Every surviving instance must keep at least this many pixels; scenes
/// that bury or shave an instance below it are rebuilt.
const MIN_VISIBLE_PIXELS: usize = 8;
const SCENE_ATTEMPTS: usize = 64;

struct Shape {
    /// Row/column center.
    cy: f64,
    cx: f64,
    /// Blob: semi-axes + orientation. Rod: half-length, thickness via `b`.
    a: f64,
    b: f64,
    phi: f64,
    /// Per-channel intensity added where the shape covers.
    intensity: [f64; 3],
}

impl Shape {
    fn bounding_radius(&self) -> f64 {
        self.a.max(self.b)
    }

    fn covers(&self, kind: SceneKind, r: usize, c: usize) -> bool {
        let dy = r as f64 - self.cy;
        let dx = c as f64 - self.cx;
        match kind {
            SceneKind::Blobs | SceneKind::Occluded => {
                // Rotate into the ellipse frame.
                let (s, co) = (fmath::sin(self.phi), fmath::cos(self.phi));
                let u = dx * co + dy * s;
                let v = -dx * s + dy * co;
                (u / self.a) * (u / self.a) + (v / self.b) * (v / self.b) <= 1.0
            }
            SceneKind::Rods => {
                // Distance to the center segment of half-length a along phi,
                // thickness b.
                let (s, co) = (fmath::sin(self.phi), fmath::cos(self.phi));
                let proj = (dx * co + dy * s).clamp(-self.a, self.a);
                let (py, px) = (self.cy + proj * s, self.cx + proj * co);
                let (ey, ex) = (r as f64 - py, c as f64 - px);
                ey * ey + ex * ex <= self.b * self.b
            }
        }
    }
}

fn draw_intensity(rng: &mut Rng, channels: usize) -> [f64; 3] {
    let mut out = [0.0; 3];
    if channels == 1 {
        let v = rng.range(0.45, 0.95);
        out = [v, v, v];
    } else {
        for slot in &mut out {
            *slot = rng.range(0.35, 0.95);
        }
        // Keep at least one strong channel so the shape is visible.
        let hi = rng.below(3) as usize;
        out[hi] = rng.range(0.6, 0.95);
    }
    out
}

/// Tries to place `count` shapes subject to the overlap policy; None means
/// a placement attempt ran out of retries.
fn place_shapes(rng: &mut Rng, cfg: &SceneConfig, count: usize) -> Option<Vec<Shape>> {
    let mut shapes: Vec<Shape> = Vec::with_capacity(count);
    let (h, w) = (cfg.height as f64, cfg.width as f64);
    for _ in 0..count {
        let mut placed = false;
        for _try in 0..120 {
            let mut leaning = false;
            let shape = match cfg.kind {
                SceneKind::Blobs | SceneKind::Occluded => {
                    let a = rng.range(cfg.min_size, cfg.max_size);
                    let b = rng.range(cfg.min_size, cfg.max_size);
                    let m = a.max(b);
                    Shape {
                        cy: rng.range(m, h - 1.0 - m),
                        cx: rng.range(m, w - 1.0 - m),
                        a,
                        b,
                        phi: rng.range(0.0, core::f64::consts::PI),
                        intensity: draw_intensity(rng, cfg.channels),
                    }
                }
                SceneKind::Rods => {
                    let half_len = rng.range(cfg.min_size, cfg.max_size);
                    let thick = (half_len / 4.0).clamp(1.5, 2.75);
                    let reach = half_len + thick;
                    leaning = cfg.allow_overlap && !shapes.is_empty() && rng.coin(0.6);
                    if leaning {
                        // Lay this rod parallel against an earlier one so
                        // their long sides touch.
                        let j = rng.below(shapes.len() as u64) as usize;
                        let base = &shapes[j];
                        let side = if rng.coin(0.5) { 1.0 } else { -1.0 };
                        let offset = base.b + thick + rng.range(-0.35, 0.1);
                        let (s, co) = (fmath::sin(base.phi), fmath::cos(base.phi));
                        let slide = rng.range(-0.3, 0.3) * base.a;
                        Shape {
                            cy: base.cy - side * offset * co + slide * s,
                            cx: base.cx + side * offset * s + slide * co,
                            a: half_len,
                            b: thick,
                            phi: base.phi,
                            intensity: draw_intensity(rng, cfg.channels),
                        }
                    } else {
                        Shape {
                            cy: rng.range(reach, h - 1.0 - reach),
                            cx: rng.range(reach, w - 1.0 - reach),
                            a: half_len,
                            b: thick,
                            phi: rng.range(0.0, core::f64::consts::PI),
                            intensity: draw_intensity(rng, cfg.channels),
                        }
                    }
                }
            };
            // Reject placements that leave the frame (the leaning branch
            // can wander) or violate the overlap policy.
            let reach = match cfg.kind {
                SceneKind::Rods => shape.a + shape.b,
                _ => shape.bounding_radius(),
            };
            let in_frame = shape.cy - reach >= -0.5
                && shape.cy + reach <= h - 0.5
                && shape.cx - reach >= -0.5
                && shape.cx + reach <= w - 0.5;
            if !in_frame {
                continue;
            }
            // A leaning rod is deliberately pressed against its neighbor,
            // so it skips the separation rules; the post-rasterization
            // visibility check catches any instance it would bury.
            let ok = leaning
                || shapes.iter().all(|other| {
                    let other_reach = match cfg.kind {
                        SceneKind::Rods => other.a + other.b,
                        _ => other.bounding_radius(),
                    };
                    let dy = shape.cy - other.cy;
                    let dx = shape.cx - other.cx;
                    let dist = fmath::sqrt(dy * dy + dx * dx);
                    if cfg.kind == SceneKind::Occluded || !cfg.allow_overlap {
                        dist >= reach + other_reach + cfg.min_gap
                    } else if cfg.kind == SceneKind::Rods {
                        dist >= 0.6 * (reach + other_reach)
                    } else {
                        // Shallow overlap: centers stay most of both radii
                        // apart, so neither blob swallows the other.
                        dist >= 0.75 * (reach + other_reach)
                    }
                });
            if ok {
                shapes.push(shape);
                placed = true;
                break;
            }
        }
        if !placed {
            return None;
        }
    }
    Some(shapes)
}

/// Rasterizes shapes in order: later shapes overwrite labels (occlusion);
/// intensities add up and are clamped to [0, 1] at the end.
fn rasterize(cfg: &SceneConfig, shapes: &[Shape]) -> (Image, Vec<u16>) {
    let (h, w) = (cfg.height, cfg.width);
    let mut image = Image::zeros(cfg.channels, h, w);
    let mut ids = vec![0u16; h * w];
    for (i, shape) in shapes.iter().enumerate() {
        let id = i as u16 + 1;
        let reach = match cfg.kind {
            SceneKind::Rods => shape.a + shape.b,
            _ => shape.bounding_radius(),
        } + 1.0;
        let r0 = (shape.cy - reach).max(0.0) as usize;
        let r1 = (fmath::floor(shape.cy + reach) as usize + 1).min(h);
        let c0 = (shape.cx - reach).max(0.0) as usize;
        let c1 = (fmath::floor(shape.cx + reach) as usize + 1).min(w);
        for r in r0..r1 {
            for c in c0..c1 {
                if !shape.covers(cfg.kind, r, c) {
                    continue;
                }
                ids[r * w + c] = id;
                for ch in 0..cfg.channels {
                    let v = image.get(ch, r, c) + shape.intensity[ch];
                    image.set(ch, r, c, v);
                }
            }
        }
    }
    (image, ids)
}

fn pixel_counts(ids: &[u16], k: usize) -> Vec<usize> {
    let mut counts = vec![0usize; k];
    for &v in ids {
        if v > 0 {
            counts[v as usize - 1] += 1;
        }
    }
    counts
}

/// 4-connectivity check that instance `id` forms a single component.
fn is_connected(ids: &[u16], w: usize, id: u16) -> bool {
    let n = ids.len();
    let start = match ids.iter().position(|&v| v == id) {
        Some(p) => p,
        None => return true,
    };
    let mut seen = vec![false; n];
    let mut stack = vec![start];
    seen[start] = true;
    let mut reached = 0usize;
    while let Some(p) = stack.pop() {
        reached += 1;
        let (r, c) = (p / w, p % w);
        let mut push = |q: usize| {
            if !seen[q] && ids[q] == id {
                seen[q] = true;
                stack.push(q);
            }
        };
        if r > 0 {
            push(p - w);
        }
        if p + w < n {
            push(p + w);
        }
        if c > 0 {
            push(p - 1);
        }
        if c + 1 < w {
            push(p + 1);
        }
    }
    reached == ids.iter().filter(|&&v| v == id).count()
}

/// Cuts one or two straight background bars through the scene, each crossing
/// the center of some instance so it is sliced in two.
fn cut_bars(rng: &mut Rng, cfg: &SceneConfig, shapes: &[Shape], image: &mut Image, ids: &mut [u16]) {
    let (h, w) = (cfg.height, cfg.width);
    let bars = 1 + rng.below(2) as usize;
    for _ in 0..bars {
        let target = &shapes[rng.below(shapes.len() as u64) as usize];
        let thickness = 2 + rng.below(2) as usize; // 2 or 3
        let horizontal = rng.coin(0.5);
        // Pass near the target's center so the cut really bisects it.
        let center = if horizontal { target.cy } else { target.cx };
        let jitter = rng.range(-1.0, 1.0);
        let lo = ((center + jitter) as usize).min(if horizontal { h - thickness } else { w - thickness });
        for t in 0..thickness {
            for along in 0..(if horizontal { w } else { h }) {
                let (r, c) = if horizontal { (lo + t, along) } else { (along, lo + t) };
                ids[r * w + c] = 0;
                for ch in 0..cfg.channels {
                    image.set(ch, r, c, 0.0);
                }
            }
        }
    }
}

/// Deterministically builds sample `index` of the configured scene family.
pub fn generate(cfg: &SceneConfig, index: u64) -> Result<Sample, String> {
    cfg.validate()?;
    let mut rng = Rng::stream(cfg.seed, index);
    for _attempt in 0..SCENE_ATTEMPTS {
        let count =
            rng.int_in(cfg.min_instances as u64, cfg.max_instances as u64) as usize;
        let Some(shapes) = place_shapes(&mut rng, cfg, count) else {
            continue;
        };
        let (mut image, mut ids) = rasterize(cfg, &shapes);
        if cfg.kind == SceneKind::Occluded {
            cut_bars(&mut rng, cfg, &shapes, &mut image, &mut ids);
        }
        // Every instance must still be decently visible.
        let counts = pixel_counts(&ids, shapes.len());
        if counts.iter().any(|&n| n < MIN_VISIBLE_PIXELS) {
            continue;
        }
        // Occluded scenes must actually contain a cut-through instance.
        if cfg.kind == SceneKind::Occluded
            && !(1..=shapes.len() as u16).any(|id| !is_connected(&ids, cfg.width, id))
        {
            continue;
        }
        if cfg.noise > 0.0 {
            for v in image.data_mut() {
                *v += cfg.noise * rng.normal();
            }
        }
        for v in image.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        let labels = InstanceLabelMap::new(cfg.height, cfg.width, ids)?;
        return Ok(Sample { image, labels });
    }
    Err(format!(
        "could not build a valid {:?} scene for seed {} index {index} after {SCENE_ATTEMPTS} attempts",
        cfg.kind, cfg.seed
    ))
}

/// The random draw for one augmentation: rotation angle, flips, crop corner.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub angle: f64,
    pub flip_h: bool,
    pub flip_v: bool,
    pub crop_top: usize,
    pub crop_left: usize,
}

impl AugmentParams {
    pub fn identity() -> AugmentParams {
        AugmentParams {
            angle: 0.0,
            flip_h: false,
            flip_v: false,
            crop_top: 0,
            crop_left: 0,
        }
    }
}

/// Draws augmentation parameters: angle uniform in [0, 2π), then the two
/// flips, then the crop offsets (in that order, for reproducibility).
pub fn draw_augment(
    height: usize,
    width: usize,
    patch_h: usize,
    patch_w: usize,
    rng: &mut Rng,
) -> Result<AugmentParams, String> {
    if patch_h == 0 || patch_h > height || patch_w == 0 || patch_w > width {
        return Err(format!(
            "patch {patch_h}x{patch_w} does not fit a {height}x{width} sample"
        ));
    }
    Ok(AugmentParams {
        angle: rng.range(0.0, 2.0 * core::f64::consts::PI),
        flip_h: rng.coin(0.5),
        flip_v: rng.coin(0.5),
        crop_top: rng.below((height - patch_h) as u64 + 1) as usize,
        crop_left: rng.below((width - patch_w) as u64 + 1) as usize,
    })
}

/// Applies a drawn transform. Every output pixel is pulled from its
/// nearest-neighbor source (image and labels alike, keeping them aligned);
/// sources outside the input become background. The rotation spins the
/// cropped window about its own center, so an angle of π is an exact
/// involution. Instance ids that vanish are compacted, preserving order.
pub fn apply_augment(
    sample: &Sample,
    patch_h: usize,
    patch_w: usize,
    params: &AugmentParams,
) -> Result<Sample, String> {
    let (h, w) = (sample.labels.height(), sample.labels.width());
    if patch_h == 0 || patch_h > h || patch_w == 0 || patch_w > w {
        return Err(format!("patch {patch_h}x{patch_w} does not fit a {h}x{w} sample"));
    }
    if params.crop_top + patch_h > h || params.crop_left + patch_w > w {
        return Err(format!(
            "crop at ({}, {}) overruns a {h}x{w} sample",
            params.crop_top, params.crop_left
        ));
    }
    let channels = sample.image.channels();
    let mut image = Image::zeros(channels, patch_h, patch_w);
    let mut ids = vec![0u16; patch_h * patch_w];
    let pcy = (patch_h as f64 - 1.0) / 2.0;
    let pcx = (patch_w as f64 - 1.0) / 2.0;
    // Inverse rotation: output offsets rotate by -angle back to the source.
    let (s, co) = (fmath::sin(params.angle), fmath::cos(params.angle));
    for r in 0..patch_h {
        for c in 0..patch_w {
            let mut dy = r as f64 - pcy;
            let mut dx = c as f64 - pcx;
            if params.flip_v {
                dy = -dy;
            }
            if params.flip_h {
                dx = -dx;
            }
            let sy = co * dy + s * dx;
            let sx = -s * dy + co * dx;
            let src_r = fmath::round(params.crop_top as f64 + pcy + sy);
            let src_c = fmath::round(params.crop_left as f64 + pcx + sx);
            if src_r < 0.0 || src_r >= h as f64 || src_c < 0.0 || src_c >= w as f64 {
                continue; // background stays zero
            }
            let (sr, sc) = (src_r as usize, src_c as usize);
            ids[r * patch_w + c] = sample.labels.id_at(sr, sc);
            for ch in 0..channels {
                image.set(ch, r, c, sample.image.get(ch, sr, sc));
            }
        }
    }
    // Compact ids that fell outside the patch.
    let k = sample.labels.num_instances();
    let mut present = vec![false; k as usize + 1];
    for &v in &ids {
        present[v as usize] = true;
    }
    let mut remap = vec![0u16; k as usize + 1];
    let mut next = 0u16;
    for id in 1..=k as usize {
        if present[id] {
            next += 1;
            remap[id] = next;
        }
    }
    for v in &mut ids {
        *v = remap[*v as usize];
    }
    Ok(Sample {
        image,
        labels: InstanceLabelMap::new(patch_h, patch_w, ids)?,
    })
}

/// Draws and applies one random augmentation.
pub fn augment(sample: &Sample, patch_h: usize, patch_w: usize, rng: &mut Rng) -> Result<Sample, String> {
    let params = draw_augment(
        sample.labels.height(),
        sample.labels.width(),
        patch_h,
        patch_w,
        rng,
    )?;
    apply_augment(sample, patch_h, patch_w, &params)
}
