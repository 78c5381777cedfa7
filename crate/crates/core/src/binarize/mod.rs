//! Hard binarization with a learnable threshold.
//!
//! Forward is a plain comparison, `O = [I >= T]`. Backward treats the
//! comparison as locally linear: the output moves with slope `-1` in the
//! threshold and `+1` in the confidence (straight-through). The threshold
//! therefore receives the upstream gradient with its sign reversed while the
//! confidence predictor receives it unchanged, so the two play opposite roles
//! during training.

mod encoder;

pub use encoder::{
    bm_apply, bm_backward, encoder_backward, ibm_threshold, init_encoder, pbm_threshold, BmGrads,
    BmTape, EncoderKind, EncoderTape, PBM_POOL, PBM_SCALE,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numgrid::Grid;

/// Lower asymptote of the compressed sigmoid.
pub const THRESHOLD_MIN: f64 = 0.2;
/// Upper asymptote of the compressed sigmoid.
pub const THRESHOLD_MAX: f64 = 0.7;

/// Per-pixel confidence in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceMap(Grid);

impl ConfidenceMap {
    pub fn new(grid: Grid) -> Result<Self> {
        if let Some(v) = grid.values().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "confidence values must lie in [0, 1], found {v}"
            )));
        }
        Ok(Self(grid))
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }
}

/// `{0, 1}`-valued raster.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryMap(Grid);

impl BinaryMap {
    pub fn new(grid: Grid) -> Result<Self> {
        if let Some(v) = grid.values().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument(format!(
                "binary map values must be 0 or 1, found {v}"
            )));
        }
        Ok(Self(grid))
    }

    pub fn grid(&self) -> &Grid {
        &self.0
    }

    pub fn into_grid(self) -> Grid {
        self.0
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    #[inline]
    pub fn is_set(&self, y: usize, x: usize) -> bool {
        self.0.get(y, x) != 0.0
    }

    pub fn count_ones(&self) -> usize {
        self.0.values().iter().filter(|&&v| v != 0.0).count()
    }

    pub fn as_confidence(&self) -> ConfidenceMap {
        ConfidenceMap(self.0.clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ThresholdField {
    Scalar(f64),
    Pixel(Grid),
}

impl ThresholdField {
    pub fn mean(&self) -> f64 {
        match self {
            ThresholdField::Scalar(t) => *t,
            ThresholdField::Pixel(g) => g.mean(),
        }
    }

    #[inline]
    fn at(&self, i: usize) -> f64 {
        match self {
            ThresholdField::Scalar(t) => *t,
            ThresholdField::Pixel(g) => g.values()[i],
        }
    }
}

/// Gradient w.r.t. a threshold field, shaped like the field.
#[derive(Clone, Debug, PartialEq)]
pub enum ThresholdGrad {
    Scalar(f64),
    Pixel(Grid),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdKind {
    Scalar,
    Pixel,
}

/// What the relaxed backward needs: the threshold kind and the output shape.
#[derive(Clone, Debug, PartialEq)]
pub struct BinarizeTape {
    pub kind: ThresholdKind,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinarizeGrads {
    pub conf: Grid,
    pub threshold: ThresholdGrad,
}

/// `O(i,j) = 1` iff `I(i,j) >= T(i,j)`.
pub fn binarize_forward(
    conf: &ConfidenceMap,
    thr: &ThresholdField,
) -> Result<(BinaryMap, BinarizeTape)> {
    let (h, w) = conf.shape();
    let kind = match thr {
        ThresholdField::Scalar(t) => {
            if !t.is_finite() {
                return Err(Error::InvalidArgument(format!("threshold must be finite, got {t}")));
            }
            ThresholdKind::Scalar
        }
        ThresholdField::Pixel(g) => {
            if g.shape() != (h, w) {
                return Err(Error::shape(
                    "binarize_forward",
                    format!("{h}x{w} threshold map"),
                    format!("{}x{}", g.height(), g.width()),
                ));
            }
            ThresholdKind::Pixel
        }
    };
    let values = conf
        .grid()
        .values()
        .iter()
        .enumerate()
        .map(|(i, &v)| if v >= thr.at(i) { 1.0 } else { 0.0 })
        .collect();
    let out = BinaryMap(Grid::new(h, w, values)?);
    Ok((
        out,
        BinarizeTape {
            kind,
            height: h,
            width: w,
        },
    ))
}

/// Relaxed backward: `dL/dT = -upstream` (summed for a scalar threshold) and
/// `dL/dI = +upstream`.
pub fn binarize_backward(tape: &BinarizeTape, upstream: &Grid) -> Result<BinarizeGrads> {
    if upstream.shape() != (tape.height, tape.width) {
        return Err(Error::shape(
            "binarize_backward",
            format!("{}x{}", tape.height, tape.width),
            format!("{}x{}", upstream.height(), upstream.width()),
        ));
    }
    let threshold = match tape.kind {
        ThresholdKind::Scalar => ThresholdGrad::Scalar(-upstream.sum()),
        ThresholdKind::Pixel => ThresholdGrad::Pixel(upstream.map(|g| -g)),
    };
    Ok(BinarizeGrads {
        conf: upstream.clone(),
        threshold,
    })
}

fn strictly_inside(v: f64) -> f64 {
    v.clamp(THRESHOLD_MIN.next_up(), THRESHOLD_MAX.next_down())
}

/// `1 / (2 + e^-x) + 0.2`, kept strictly inside `(0.2, 0.7)` even where the
/// exact value rounds onto an asymptote.
pub fn compressed_sigmoid_scalar(x: f64) -> f64 {
    let core = if x >= 0.0 {
        1.0 / (2.0 + (-x).exp())
    } else {
        let u = x.exp();
        u / (2.0 * u + 1.0)
    };
    strictly_inside(core + THRESHOLD_MIN)
}

/// `e^-x / (2 + e^-x)^2`, evaluated without overflow.
pub fn compressed_sigmoid_derivative(x: f64) -> f64 {
    if x >= 0.0 {
        let t = (-x).exp();
        t / ((2.0 + t) * (2.0 + t))
    } else {
        let u = x.exp();
        u / ((2.0 * u + 1.0) * (2.0 * u + 1.0))
    }
}

pub fn compressed_sigmoid(x: &Grid) -> Grid {
    x.map(compressed_sigmoid_scalar)
}

/// Backward from the forward *input*.
pub fn compressed_sigmoid_backward(x: &Grid, grad_out: &Grid) -> Result<Grid> {
    if x.shape() != grad_out.shape() {
        return Err(Error::shape(
            "compressed_sigmoid_backward",
            format!("{:?}", x.shape()),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let values = x
        .values()
        .iter()
        .zip(grad_out.values())
        .map(|(&xv, &g)| g * compressed_sigmoid_derivative(xv))
        .collect();
    Grid::new(x.height(), x.width(), values)
}
