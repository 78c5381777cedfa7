//! 4-connected components and the per-instance localization read-out.

use serde::{Deserialize, Serialize};

use crate::binarize::BinaryMap;
use crate::error::{Error, Result};
use crate::labels::InstanceLabelMap;

/// Components smaller than this many pixels are dropped by default.
pub const DEFAULT_MIN_AREA: usize = 3;

/// One connected component. Boxes are inclusive pixel coordinates; the
/// centroid is the mean of member pixel coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub label: u32,
    pub bbox: [usize; 4],
    pub centroid: [f64; 2],
    pub area: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalizationResult {
    pub image_id: String,
    pub instances: Vec<Instance>,
}

impl LocalizationResult {
    pub fn count(&self) -> usize {
        self.instances.len()
    }

    pub fn centers(&self) -> Vec<[f64; 2]> {
        self.instances.iter().map(|i| i.centroid).collect()
    }

    /// `image_id count x1 y1 x2 y2 cx cy x1 y1 ...`, one line, no newline.
    pub fn to_record(&self) -> String {
        let mut s = format!("{} {}", self.image_id, self.count());
        for inst in &self.instances {
            let [x1, y1, x2, y2] = inst.bbox;
            s.push_str(&format!(
                " {x1} {y1} {x2} {y2} {} {}",
                inst.centroid[0], inst.centroid[1]
            ));
        }
        s
    }

    /// Parse a line written by [`Self::to_record`]. Areas are not part of the
    /// record and come back as 0.
    pub fn from_record(line: &str) -> Result<Self> {
        let bad = |why: &str| Error::InvalidArgument(format!("localization record: {why}"));
        let mut it = line.split_whitespace();
        let image_id = it.next().ok_or_else(|| bad("empty line"))?.to_string();
        let count: usize = it
            .next()
            .ok_or_else(|| bad("missing count"))?
            .parse()
            .map_err(|_| bad("count is not an integer"))?;
        let rest: Vec<&str> = it.collect();
        if rest.len() != 6 * count {
            return Err(bad(&format!("expected {} fields after count, got {}", 6 * count, rest.len())));
        }
        let instances = rest
            .chunks(6)
            .enumerate()
            .map(|(k, f)| {
                let u = |s: &str| s.parse::<usize>().map_err(|_| bad("bbox is not an integer"));
                let r = |s: &str| s.parse::<f64>().map_err(|_| bad("centroid is not a number"));
                Ok(Instance {
                    label: k as u32 + 1,
                    bbox: [u(f[0])?, u(f[1])?, u(f[2])?, u(f[3])?],
                    centroid: [r(f[4])?, r(f[5])?],
                    area: 0,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            image_id,
            instances,
        })
    }
}

struct DisjointSet {
    parent: Vec<u32>,
    size: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        // Slot 0 is the background and never unioned.
        Self {
            parent: vec![0],
            size: vec![1],
        }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        self.size.push(1);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        let mut root = x;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        while self.parent[x as usize] != root {
            let next = self.parent[x as usize];
            self.parent[x as usize] = root;
            x = next;
        }
        root
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        let (big, small) = if self.size[ra as usize] >= self.size[rb as usize] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        self.parent[small as usize] = big;
        self.size[big as usize] += self.size[small as usize];
    }
}

/// Two-pass union-find labeling under 4-connectivity. Labels are compacted to
/// `1..=K` in order of first appearance in a raster scan.
pub fn label_components(bin: &BinaryMap) -> Result<InstanceLabelMap> {
    let (h, w) = bin.shape();
    let values = bin.grid().values();
    if let Some(v) = values.iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(Error::InvalidArgument(format!("non-binary value {v} in label input")));
    }
    let mut provisional = vec![0u32; h * w];
    let mut sets = DisjointSet::new();
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if values[i] == 0.0 {
                continue;
            }
            let west = if x > 0 { provisional[i - 1] } else { 0 };
            let north = if y > 0 { provisional[i - w] } else { 0 };
            provisional[i] = match (west, north) {
                (0, 0) => sets.make(),
                (a, 0) | (0, a) => a,
                (a, b) => {
                    sets.union(a, b);
                    a.min(b)
                }
            };
        }
    }

    let mut compact = vec![0u32; sets.parent.len()];
    let mut next = 0u32;
    for p in provisional.iter_mut() {
        if *p == 0 {
            continue;
        }
        let root = sets.find(*p) as usize;
        if compact[root] == 0 {
            next += 1;
            compact[root] = next;
        }
        *p = compact[root];
    }
    Ok(InstanceLabelMap::from_parts(h, w, provisional, next as usize))
}

/// Tight box, centroid and area of every label; components below `min_area`
/// are dropped and the survivors relabeled `1..` in label order.
pub fn extract_instances(labels: &InstanceLabelMap, min_area: usize, image_id: &str) -> LocalizationResult {
    struct Acc {
        x1: usize,
        y1: usize,
        x2: usize,
        y2: usize,
        sx: f64,
        sy: f64,
        n: usize,
    }
    let (h, w) = labels.shape();
    let k = labels.labels().iter().copied().max().unwrap_or(0) as usize;
    let mut acc: Vec<Option<Acc>> = (0..k).map(|_| None).collect();
    for y in 0..h {
        for x in 0..w {
            let l = labels.get(y, x);
            if l == 0 {
                continue;
            }
            let a = acc[l as usize - 1].get_or_insert(Acc {
                x1: x,
                y1: y,
                x2: x,
                y2: y,
                sx: 0.0,
                sy: 0.0,
                n: 0,
            });
            a.x1 = a.x1.min(x);
            a.x2 = a.x2.max(x);
            a.y1 = a.y1.min(y);
            a.y2 = a.y2.max(y);
            a.sx += x as f64;
            a.sy += y as f64;
            a.n += 1;
        }
    }
    let instances = acc
        .into_iter()
        .flatten()
        .filter(|a| a.n >= min_area.max(1))
        .enumerate()
        .map(|(i, a)| Instance {
            label: i as u32 + 1,
            bbox: [a.x1, a.y1, a.x2, a.y2],
            centroid: [a.sx / a.n as f64, a.sy / a.n as f64],
            area: a.n,
        })
        .collect();
    LocalizationResult {
        image_id: image_id.to_string(),
        instances,
    }
}
