//! Synthetic crowd scenes: soft bright disks ("heads") of varied size and
//! contrast on a noisy, unevenly lit background, with elongated clutter blobs
//! that are not heads.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{iim_from_boxes, Annotation, InstanceLabelMap};
use crate::numgrid::Grid;

const PLACEMENT_RETRIES: usize = 2000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    pub min_heads: usize,
    pub max_heads: usize,
    pub min_radius: f64,
    pub max_radius: f64,
    /// Standard deviation of the additive pixel noise.
    pub noise: f64,
    /// Maximum number of elongated clutter blobs per scene.
    pub clutter: usize,
    /// Maximum number of dim round distractor blobs per scene. Their
    /// amplitude scales with the scene contrast, so a faint blob may be a
    /// head in one scene and background in another.
    pub distractors: usize,
    /// Probability that heads gather around a few cluster centers.
    pub cluster_prob: f64,
    /// Probability that a scene contains no heads at all.
    pub negative_prob: f64,
    /// Per-image head contrast is drawn from this range.
    pub min_contrast: f64,
    pub max_contrast: f64,
    pub seed: u64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            min_heads: 1,
            max_heads: 30,
            min_radius: 2.0,
            max_radius: 12.0,
            noise: 0.04,
            clutter: 4,
            distractors: 8,
            cluster_prob: 0.5,
            negative_prob: 0.05,
            min_contrast: 0.15,
            max_contrast: 0.8,
            seed: 7,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.height < 8 || self.width < 8 {
            return bad(format!("scene size {}x{} below 8x8", self.height, self.width));
        }
        if self.min_heads > self.max_heads {
            return bad(format!("min_heads {} > max_heads {}", self.min_heads, self.max_heads));
        }
        if !(self.min_radius > 0.0 && self.min_radius <= self.max_radius) {
            return bad(format!("radius range [{}, {}] invalid", self.min_radius, self.max_radius));
        }
        if 2.0 * self.max_radius + 1.0 > self.height.min(self.width) as f64 {
            return bad(format!("max_radius {} does not fit the image", self.max_radius));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise must be >= 0, got {}", self.noise));
        }
        for (name, p) in [("cluster_prob", self.cluster_prob), ("negative_prob", self.negative_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        if !(0.0 < self.min_contrast && self.min_contrast <= self.max_contrast && self.max_contrast <= 1.0) {
            return bad(format!("contrast range [{}, {}] invalid", self.min_contrast, self.max_contrast));
        }
        Ok(())
    }
}

/// A rendered scene with its exact annotation and ground-truth instance map.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub image: Grid,
    pub annotation: Annotation,
    pub gt: InstanceLabelMap,
}

/// Deterministic per-scene generator, independent of generation order.
pub fn scene_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

struct Head {
    x: f64,
    y: f64,
    r: f64,
    amp: f64,
}

fn place_heads<R: Rng + ?Sized>(spec: &SceneSpec, n: usize, rng: &mut R) -> Result<Vec<Head>> {
    let (h, w) = (spec.height as f64, spec.width as f64);
    let clustered = rng.random_bool(spec.cluster_prob);
    let centers: Vec<(f64, f64, f64)> = (0..rng.random_range(1..=3))
        .map(|_| (rng.random_range(0.0..w), rng.random_range(0.0..h), rng.random_range(8.0..24.0)))
        .collect();
    let (lo, hi) = (spec.min_radius.ln(), spec.max_radius.ln());
    let mut heads: Vec<Head> = Vec::with_capacity(n);
    for i in 0..n {
        let mut placed = false;
        for attempt in 0..PLACEMENT_RETRIES {
            let r = if hi > lo { rng.random_range(lo..=hi).exp() } else { spec.min_radius };
            // A full cluster spills over into uniform placement.
            let (x, y) = if clustered && attempt < PLACEMENT_RETRIES / 2 {
                let (cx, cy, s) = centers[rng.random_range(0..centers.len())];
                let g = Normal::new(0.0, s).expect("positive spread");
                (cx + g.sample(rng), cy + g.sample(rng))
            } else {
                (rng.random_range(0.0..w), rng.random_range(0.0..h))
            };
            if x < r || y < r || x > w - 1.0 - r || y > h - 1.0 - r {
                continue;
            }
            if heads.iter().any(|o| ((o.x - x).powi(2) + (o.y - y).powi(2)).sqrt() < o.r + r + 2.0) {
                continue;
            }
            heads.push(Head { x, y, r, amp: rng.random_range(0.6..=1.0) });
            placed = true;
            break;
        }
        if !placed {
            return Err(Error::Placement(format!(
                "head {} of {n} did not fit after {PLACEMENT_RETRIES} attempts",
                i + 1
            )));
        }
    }
    Ok(heads)
}

/// Fraction of the pixel at distance `d` covered by an edge at `edge`.
fn coverage(d: f64, edge: f64) -> f64 {
    (edge + 0.5 - d).clamp(0.0, 1.0)
}

/// Adds a soft-edged disk that is brightest in the middle.
fn stamp_disk(img: &mut Grid, cx: f64, cy: f64, r: f64, amp: f64) {
    let (hh, ww) = img.shape();
    let (x0, x1) = ((cx - r - 1.0).floor().max(0.0) as usize, (cx + r + 1.0).ceil() as usize);
    let (y0, y1) = ((cy - r - 1.0).floor().max(0.0) as usize, (cy + r + 1.0).ceil() as usize);
    for y in y0..=y1.min(hh - 1) {
        for x in x0..=x1.min(ww - 1) {
            let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
            let c = coverage(d, r);
            if c > 0.0 {
                let dome = 1.0 - 0.4 * (d / r).min(1.0).powi(2);
                img.set(y, x, img.get(y, x) + amp * dome * c);
            }
        }
    }
}

pub fn synth_scene<R: Rng + ?Sized>(spec: &SceneSpec, id: &str, rng: &mut R) -> Result<Scene> {
    spec.validate()?;
    let (hh, ww) = (spec.height, spec.width);
    let n = if rng.random_bool(spec.negative_prob) {
        0
    } else {
        rng.random_range(spec.min_heads..=spec.max_heads)
    };
    let heads = place_heads(spec, n, rng)?;
    let gain = rng.random_range(spec.min_contrast..=spec.max_contrast);

    let base = rng.random_range(0.05..0.3);
    let (gx, gy) = (rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15));
    let mut img = Grid::from_fn(hh, ww, |y, x| {
        base + gx * (x as f64 / ww as f64 - 0.5) + gy * (y as f64 / hh as f64 - 0.5)
    });
    // Smooth illumination that scales every object's amplitude.
    let (lx, ly) = (rng.random_range(-0.6..0.6), rng.random_range(-0.6..0.6));
    let light = |x: f64, y: f64| 1.0 + lx * (x / ww as f64 - 0.5) + ly * (y / hh as f64 - 0.5);

    for hd in &heads {
        stamp_disk(&mut img, hd.x, hd.y, hd.r, gain * hd.amp * light(hd.x, hd.y));
    }

    for _ in 0..rng.random_range(0..=spec.distractors) {
        let r = rng.random_range(spec.min_radius..=spec.min_radius.max(0.6 * spec.max_radius));
        let (x, y) = (rng.random_range(0.0..ww as f64), rng.random_range(0.0..hh as f64));
        let amp = gain * rng.random_range(0.15..0.35) * light(x, y);
        if heads.iter().all(|o| ((o.x - x).powi(2) + (o.y - y).powi(2)).sqrt() >= o.r + r + 2.0) {
            stamp_disk(&mut img, x, y, r, amp);
        }
    }

    for _ in 0..rng.random_range(0..=spec.clutter) {
        let (cx, cy) = (rng.random_range(0.0..ww as f64), rng.random_range(0.0..hh as f64));
        let (a, b) = (rng.random_range(6.0..16.0), rng.random_range(1.0..2.5));
        let t: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let amp = gain * rng.random_range(0.4..0.9) * light(cx, cy);
        let (s, c) = t.sin_cos();
        for y in 0..hh {
            for x in 0..ww {
                let (dx, dy) = (x as f64 - cx, y as f64 - cy);
                let (u, v) = (dx * c + dy * s, -dx * s + dy * c);
                let rho = ((u / a).powi(2) + (v / b).powi(2)).sqrt();
                // Distance to the boundary measured along the minor axis.
                let cov = coverage(rho * b, b);
                if cov > 0.0 {
                    img.set(y, x, img.get(y, x) + amp * cov);
                }
            }
        }
    }

    let sigma = spec.noise * rng.random_range(0.5..1.5);
    if sigma > 0.0 {
        let noise = Normal::new(0.0, sigma).expect("positive noise");
        img.values_mut().iter_mut().for_each(|v| *v += noise.sample(rng));
    }
    img.values_mut()
        .iter_mut()
        .for_each(|v| *v = (v.clamp(0.0, 1.0) * 255.0).round() / 255.0);

    let annotation = Annotation {
        id: id.to_string(),
        points: heads.iter().map(|h| [h.x, h.y]).collect(),
        boxes: heads
            .iter()
            .map(|h| {
                [
                    (h.x - h.r).round().max(0.0),
                    (h.y - h.r).round().max(0.0),
                    (h.x + h.r).round().min((ww - 1) as f64),
                    (h.y + h.r).round().min((hh - 1) as f64),
                ]
            })
            .collect(),
    };
    let gt = iim_from_boxes(&annotation, hh, ww)?;
    Ok(Scene { image: img, annotation, gt })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::label_components;

    fn one_head() -> SceneSpec {
        SceneSpec {
            min_heads: 1,
            max_heads: 1,
            min_radius: 5.0,
            max_radius: 5.0,
            noise: 0.0,
            clutter: 0,
            negative_prob: 0.0,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn negative_sample_has_no_heads() {
        let spec = SceneSpec { min_heads: 0, max_heads: 0, ..SceneSpec::default() };
        let s = synth_scene(&spec, "neg", &mut scene_rng(1, 0)).unwrap();
        assert_eq!(s.annotation.count(), 0);
        assert_eq!(s.gt.count(), 0);
    }

    #[test]
    fn single_head_box_side() {
        for seed in 0..20 {
            let s = synth_scene(&one_head(), "one", &mut scene_rng(seed, 0)).unwrap();
            let b = s.annotation.boxes[0];
            for side in [b[2] - b[0], b[3] - b[1]] {
                assert!((9.0..=11.0).contains(&side), "side {side}");
            }
            let [x, y] = s.annotation.points[0];
            assert!(s.image.get(y.round() as usize, x.round() as usize) > s.image.get(0, 0));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = SceneSpec::default();
        let a = synth_scene(&spec, "a", &mut scene_rng(9, 3)).unwrap();
        let b = synth_scene(&spec, "a", &mut scene_rng(9, 3)).unwrap();
        assert_eq!(a, b);
        let c = synth_scene(&spec, "a", &mut scene_rng(9, 4)).unwrap();
        assert_ne!(a.image, c.image);
    }

    #[test]
    fn gt_matches_annotation_and_image_is_quantized() {
        for stream in 0..30 {
            let s = synth_scene(&SceneSpec::default(), "s", &mut scene_rng(2, stream)).unwrap();
            assert_eq!(s.gt.count(), s.annotation.count());
            assert_eq!(label_components(&s.gt.to_binary()).unwrap().count(), s.annotation.count());
            assert!(s.image.values().iter().all(|v| (v * 255.0 - (v * 255.0).round()).abs() < 1e-9));
        }
    }

    #[test]
    fn scale_variation() {
        let spec = SceneSpec { min_radius: 2.0, max_radius: 14.0, ..SceneSpec::default() };
        let mut radii = Vec::new();
        for stream in 0..40 {
            let s = synth_scene(&spec, "s", &mut scene_rng(5, stream)).unwrap();
            radii.extend(s.annotation.boxes.iter().map(|b| (b[2] - b[0]) / 2.0));
        }
        let lo = radii.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = radii.iter().cloned().fold(0.0, f64::max);
        assert!(hi / lo >= 4.0, "{lo}..{hi}");
    }

    #[test]
    fn overcrowded_spec_is_rejected() {
        let spec = SceneSpec {
            height: 32,
            width: 32,
            min_heads: 40,
            max_heads: 40,
            min_radius: 6.0,
            max_radius: 6.0,
            negative_prob: 0.0,
            ..SceneSpec::default()
        };
        assert!(matches!(synth_scene(&spec, "x", &mut scene_rng(0, 0)), Err(Error::Placement(_))));
    }
}
