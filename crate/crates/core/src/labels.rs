//! Independent instance map (IIM) ground truth.
//!
//! Every annotated head becomes one connected region that does not touch any
//! other region under 4-connectivity, so relabeling the binarized map gives
//! back exactly one component per head.

use serde::{Deserialize, Serialize};

use crate::binarize::BinaryMap;
use crate::error::{Error, Result};
use crate::numgrid::Grid;

/// Largest disk radius in point mode (31-pixel diameter).
pub const MAX_POINT_RADIUS: i64 = 15;
/// Per-round shrink factor for overlapping boxes.
pub const SHRINK_FACTOR: f64 = 0.95;

/// Ground truth for one image. `boxes[i]`, when present, belongs to
/// `points[i]`; boxes are inclusive pixel coordinates `[x1, y1, x2, y2]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: String,
    pub points: Vec<[f64; 2]>,
    #[serde(default)]
    pub boxes: Vec<[f64; 4]>,
}

impl Annotation {
    pub fn has_boxes(&self) -> bool {
        !self.boxes.is_empty()
    }

    /// Matching radius per instance: half the box diagonal.
    pub fn sigma_l(&self) -> Vec<f64> {
        self.boxes
            .iter()
            .map(|b| {
                let (w, h) = (b[2] - b[0], b[3] - b[1]);
                (w * w + h * h).sqrt() / 2.0
            })
            .collect()
    }

    pub fn box_centers(&self) -> Vec<[f64; 2]> {
        self.boxes
            .iter()
            .map(|b| [(b[0] + b[2]) / 2.0, (b[1] + b[3]) / 2.0])
            .collect()
    }

    pub fn count(&self) -> usize {
        self.points.len().max(self.boxes.len())
    }

    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Annotation {
            id: self.id.clone(),
            reason: reason.into(),
        }
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        if self.has_boxes() && !self.points.is_empty() && self.boxes.len() != self.points.len() {
            return Err(self.err(format!(
                "{} boxes for {} points",
                self.boxes.len(),
                self.points.len()
            )));
        }
        let (wf, hf) = (width as f64, height as f64);
        for (i, p) in self.points.iter().enumerate() {
            if !(p[0].is_finite() && p[1].is_finite()) || p[0] < 0.0 || p[1] < 0.0 || p[0] > wf - 1.0 || p[1] > hf - 1.0 {
                return Err(self.err(format!("point {i} {p:?} outside {width}x{height} image")));
            }
        }
        for (i, b) in self.boxes.iter().enumerate() {
            if !b.iter().all(|v| v.is_finite()) || !(b[0] < b[2] && b[1] < b[3]) {
                return Err(self.err(format!("box {i} {b:?} is degenerate")));
            }
        }
        Ok(())
    }
}

/// Integer label raster: 0 is background, `k >= 1` is instance `k`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InstanceLabelMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
    count: usize,
}

impl InstanceLabelMap {
    /// Wrap a raw label raster; `count` is the largest label present.
    pub fn from_labels(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 || labels.len() != height * width {
            return Err(Error::shape(
                "InstanceLabelMap",
                format!("{height}x{width} labels"),
                format!("{} labels", labels.len()),
            ));
        }
        let count = labels.iter().copied().max().unwrap_or(0) as usize;
        Ok(Self {
            height,
            width,
            labels,
            count,
        })
    }

    pub(crate) fn from_parts(height: usize, width: usize, labels: Vec<u32>, count: usize) -> Self {
        Self {
            height,
            width,
            labels,
            count,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn to_binary(&self) -> BinaryMap {
        let g = Grid::new(
            self.height,
            self.width,
            self.labels.iter().map(|&l| if l > 0 { 1.0 } else { 0.0 }).collect(),
        )
        .expect("non-empty raster");
        BinaryMap::new(g).expect("binary values")
    }
}

#[derive(Clone, Copy, Debug)]
struct ShrinkBox {
    cx: f64,
    cy: f64,
    half_w: f64,
    half_h: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Raster {
    x1: i64,
    y1: i64,
    x2: i64,
    y2: i64,
}

impl Raster {
    fn width(&self) -> i64 {
        self.x2 - self.x1 + 1
    }

    fn height(&self) -> i64 {
        self.y2 - self.y1 + 1
    }

    fn area(&self) -> i64 {
        self.width() * self.height()
    }

    fn is_floor(&self) -> bool {
        self.x1 == self.x2 && self.y1 == self.y2
    }

    /// Empty pixels between the two rectangles along the better-separated
    /// axis; negative when they overlap, 0 when they touch.
    fn gap(&self, o: &Raster) -> i64 {
        let dx = (o.x1 - self.x2).max(self.x1 - o.x2) - 1;
        let dy = (o.y1 - self.y2).max(self.y1 - o.y2) - 1;
        dx.max(dy)
    }
}

impl ShrinkBox {
    fn raster(&self, width: usize, height: usize) -> Raster {
        let cl = |v: f64, n: usize| (v.round() as i64).clamp(0, n as i64 - 1);
        Raster {
            x1: cl(self.cx - self.half_w, width),
            y1: cl(self.cy - self.half_h, height),
            x2: cl(self.cx + self.half_w, width),
            y2: cl(self.cy + self.half_h, height),
        }
    }
}

fn separated(a: &Raster, b: &Raster) -> bool {
    let small = if a.area() <= b.area() { a } else { b };
    let need = 0.25 * small.width().min(small.height()) as f64;
    a.gap(b) as f64 > need
}

/// Paint each box as a filled rectangle. Pairs closer than a quarter of the
/// smaller box's short side shrink about their centers by 0.95 per round
/// until they separate or reach a single pixel.
pub fn iim_from_boxes(ann: &Annotation, height: usize, width: usize) -> Result<InstanceLabelMap> {
    ann.validate(height, width)?;
    if !ann.has_boxes() && !ann.points.is_empty() {
        return Err(ann.err("box mode needs box annotations"));
    }
    let mut boxes: Vec<ShrinkBox> = ann
        .boxes
        .iter()
        .map(|b| ShrinkBox {
            cx: (b[0] + b[2]) / 2.0,
            cy: (b[1] + b[3]) / 2.0,
            half_w: (b[2] - b[0]) / 2.0,
            half_h: (b[3] - b[1]) / 2.0,
        })
        .collect();
    let n = boxes.len();

    let centers: Vec<(i64, i64)> = boxes
        .iter()
        .map(|b| (b.cx.round() as i64, b.cy.round() as i64))
        .collect();
    for i in 0..n {
        for j in i + 1..n {
            if centers[i] == centers[j] {
                return Err(ann.err(format!("boxes {i} and {j} share the center {:?}", centers[i])));
            }
        }
    }

    let mut rasters: Vec<Raster> = boxes.iter().map(|b| b.raster(width, height)).collect();
    loop {
        let mut violating = vec![false; n];
        let mut any = false;
        for i in 0..n {
            for j in i + 1..n {
                if !separated(&rasters[i], &rasters[j]) {
                    violating[i] = true;
                    violating[j] = true;
                    any = true;
                }
            }
        }
        if !any {
            break;
        }
        let mut progressed = false;
        for k in (0..n).filter(|&k| violating[k]) {
            if !rasters[k].is_floor() {
                boxes[k].half_w *= SHRINK_FACTOR;
                boxes[k].half_h *= SHRINK_FACTOR;
                rasters[k] = boxes[k].raster(width, height);
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }

    for i in 0..n {
        for j in i + 1..n {
            if rasters[i].gap(&rasters[j]) < 1 {
                return Err(ann.err(format!(
                    "boxes {i} and {j} still touch at single-pixel size"
                )));
            }
        }
    }

    let mut labels = vec![0u32; height * width];
    for (k, r) in rasters.iter().enumerate() {
        for y in r.y1..=r.y2 {
            let row = y as usize * width;
            for x in r.x1..=r.x2 {
                labels[row + x as usize] = k as u32 + 1;
            }
        }
    }
    Ok(InstanceLabelMap::from_parts(height, width, labels, n))
}

/// Largest integer radius strictly below `(d - 1) / 2`, capped at 15.
fn point_radius(nn_dist: Option<f64>) -> i64 {
    match nn_dist {
        None => MAX_POINT_RADIUS,
        Some(d) => (((d - 1.0) / 2.0).ceil() as i64 - 1).clamp(0, MAX_POINT_RADIUS),
    }
}

/// Paint each point as a disk whose radius is limited by its nearest
/// neighbor, so no two disks touch.
pub fn iim_from_points(ann: &Annotation, height: usize, width: usize) -> Result<InstanceLabelMap> {
    ann.validate(height, width)?;
    let centers: Vec<(i64, i64)> = ann
        .points
        .iter()
        .map(|p| (p[0].round() as i64, p[1].round() as i64))
        .collect();
    let n = centers.len();
    let mut nn = vec![None::<f64>; n];
    for i in 0..n {
        for j in i + 1..n {
            let (dx, dy) = (centers[i].0 - centers[j].0, centers[i].1 - centers[j].1);
            let d2 = dx * dx + dy * dy;
            if d2 <= 1 {
                return Err(ann.err(format!(
                    "points {i} and {j} fall on the same or 4-adjacent pixels"
                )));
            }
            let d = (d2 as f64).sqrt();
            for k in [i, j] {
                nn[k] = Some(nn[k].map_or(d, |v: f64| v.min(d)));
            }
        }
    }

    let mut labels = vec![0u32; height * width];
    for (k, &(cx, cy)) in centers.iter().enumerate() {
        let r = point_radius(nn[k]);
        let (h, w) = (height as i64, width as i64);
        for y in (cy - r).max(0)..=(cy + r).min(h - 1) {
            for x in (cx - r).max(0)..=(cx + r).min(w - 1) {
                let (dx, dy) = (x - cx, y - cy);
                if dx * dx + dy * dy <= r * r {
                    labels[(y * w + x) as usize] = k as u32 + 1;
                }
            }
        }
    }
    Ok(InstanceLabelMap::from_parts(height, width, labels, n))
}
