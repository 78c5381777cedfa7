//! Versioned binary model container.
//!
//! ```text
//! magic  b"IIMMODEL"
//! u32    format version (little endian)
//! u64    header length
//! header JSON: flags, counters and the layer layout of every tensor group
//! body   f64 little endian: layer threshold, then per group and layer
//!        weight, bias, slope
//! ```
//! Groups, in order: predictor, encoder, predictor Adam m / v, encoder Adam m / v.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{ModelState, Routing, ThresholdMode};
use crate::error::{Error, Result};
use crate::numgrid::{AdamMoments, LayerParams};

pub const MAGIC: &[u8; 8] = b"IIMMODEL";
pub const FORMAT_VERSION: u32 = 1;
const GROUPS: [&str; 6] = ["predictor", "encoder", "predictor.m", "predictor.v", "encoder.m", "encoder.v"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LayerShape {
    name: String,
    out_channels: usize,
    in_channels: usize,
    kernel_h: usize,
    kernel_w: usize,
}

impl LayerShape {
    fn of(p: &LayerParams) -> Self {
        Self {
            name: p.name.clone(),
            out_channels: p.out_channels,
            in_channels: p.in_channels,
            kernel_h: p.kernel_h,
            kernel_w: p.kernel_w,
        }
    }

    fn len(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel_h * self.kernel_w + self.out_channels + 1
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    mode: ThresholdMode,
    routing: Routing,
    channels: usize,
    min_area: usize,
    step: u64,
    epoch: usize,
    groups: Vec<(String, Vec<LayerShape>)>,
}

fn groups(m: &ModelState) -> [&[LayerParams]; 6] {
    [
        &m.predictor,
        &m.encoder,
        &m.predictor_moments.m,
        &m.predictor_moments.v,
        &m.encoder_moments.m,
        &m.encoder_moments.v,
    ]
}

pub fn to_bytes(model: &ModelState) -> Vec<u8> {
    let gs = groups(model);
    let header = Header {
        mode: model.mode,
        routing: model.routing,
        channels: model.channels,
        min_area: model.min_area,
        step: model.step,
        epoch: model.epoch,
        groups: GROUPS
            .iter()
            .zip(gs)
            .map(|(n, g)| (n.to_string(), g.iter().map(LayerShape::of).collect()))
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&model.layer_threshold.to_le_bytes());
    for g in gs {
        for p in g {
            for v in p.weight.iter().chain(&p.bias).chain(std::iter::once(&p.slope)) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        let v = f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        if v.is_finite() {
            Ok(v)
        } else {
            Err(format!("non-finite value before byte {}", self.pos))
        }
    }
}

fn parse(bytes: &[u8]) -> std::result::Result<ModelState, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err("not a model file (bad magic)".into());
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(format!("unsupported format version {version}"));
    }
    let hlen = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
    let hlen = usize::try_from(hlen).map_err(|_| "header length overflow".to_string())?;
    let header: Header = serde_json::from_slice(r.take(hlen)?).map_err(|e| format!("bad header: {e}"))?;

    // The layout must be exactly what a fresh model of this kind would have.
    let template = ModelState::new(header.mode, header.routing, header.channels, 0).map_err(|e| e.to_string())?;
    let expected: Vec<Vec<LayerShape>> = groups(&template)
        .iter()
        .map(|g| g.iter().map(LayerShape::of).collect())
        .collect();
    if header.groups.len() != GROUPS.len() {
        return Err(format!("expected {} tensor groups, found {}", GROUPS.len(), header.groups.len()));
    }
    for ((name, shapes), (want_name, want)) in header.groups.iter().zip(GROUPS.iter().zip(&expected)) {
        if name != want_name || shapes != want {
            return Err(format!("tensor group `{name}` does not match a {} model", header.mode));
        }
    }

    let layer_threshold = r.f64()?;
    let mut loaded: Vec<Vec<LayerParams>> = Vec::with_capacity(GROUPS.len());
    for (_, shapes) in &header.groups {
        let mut layers = Vec::with_capacity(shapes.len());
        for s in shapes {
            let mut p = LayerParams::zeros(s.name.clone(), s.out_channels, s.in_channels, s.kernel_h, s.kernel_w);
            debug_assert_eq!(p.weight.len() + p.bias.len() + 1, s.len());
            for w in &mut p.weight {
                *w = r.f64()?;
            }
            for b in &mut p.bias {
                *b = r.f64()?;
            }
            p.slope = r.f64()?;
            layers.push(p);
        }
        loaded.push(layers);
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes", bytes.len() - r.pos));
    }
    let mut it = loaded.into_iter();
    let mut next = || it.next().expect("six groups");
    let (predictor, encoder) = (next(), next());
    let predictor_moments = AdamMoments { m: next(), v: next() };
    let encoder_moments = AdamMoments { m: next(), v: next() };
    Ok(ModelState {
        mode: header.mode,
        routing: header.routing,
        channels: header.channels,
        min_area: header.min_area,
        predictor,
        encoder,
        layer_threshold,
        predictor_moments,
        encoder_moments,
        step: header.step,
        epoch: header.epoch,
    })
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<ModelState> {
    parse(bytes).map_err(|reason| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    })
}

pub fn save_checkpoint(model: &ModelState, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}
