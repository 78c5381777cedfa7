use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::predictor::{init_predictor, predict_confidence};
use super::scene::scene_rng;
use crate::binarize::{
    bm_apply, binarize_forward, init_encoder, BinaryMap, ConfidenceMap, EncoderKind, ThresholdField,
};
use crate::error::{Error, Result};
use crate::instances::DEFAULT_MIN_AREA;
use crate::numgrid::{AdamMoments, FeatureStack, Grid, LayerParams};

/// How the confidence map is binarized.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind", content = "value")]
pub enum ThresholdMode {
    /// One global threshold that never changes.
    Fixed(f64),
    /// One learnable scalar threshold updated by plain gradient descent.
    Layer,
    /// Image-level threshold encoder.
    Ibm,
    /// Pixel-level threshold encoder.
    Pbm,
}

impl ThresholdMode {
    pub fn encoder_kind(self) -> Option<EncoderKind> {
        match self {
            ThresholdMode::Ibm => Some(EncoderKind::Ibm),
            ThresholdMode::Pbm => Some(EncoderKind::Pbm),
            _ => None,
        }
    }
}

impl fmt::Display for ThresholdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ThresholdMode::Fixed(t) => write!(f, "fixed:{t}"),
            ThresholdMode::Layer => f.write_str("layer"),
            ThresholdMode::Ibm => f.write_str("ibm"),
            ThresholdMode::Pbm => f.write_str("pbm"),
        }
    }
}

impl FromStr for ThresholdMode {
    type Err = Error;

    /// `fixed:<t>`, `layer`, `ibm` or `pbm`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "layer" => Ok(ThresholdMode::Layer),
            "ibm" => Ok(ThresholdMode::Ibm),
            "pbm" => Ok(ThresholdMode::Pbm),
            _ => {
                let t = s
                    .strip_prefix("fixed:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown threshold mode `{s}`")))?;
                if !(t > 0.0 && t <= 1.0) {
                    return Err(Error::Config(format!("fixed threshold must be in (0, 1], got {t}")));
                }
                Ok(ThresholdMode::Fixed(t))
            }
        }
    }
}

/// Which networks the L1 loss on the binary map reaches. The threshold
/// encoder always receives it; the confidence predictor only with `TeAndCp`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Routing {
    TeOnly,
    TeAndCp,
}

impl fmt::Display for Routing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Routing::TeOnly => "te-only",
            Routing::TeAndCp => "te-and-cp",
        })
    }
}

impl FromStr for Routing {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "te-only" | "te" => Ok(Routing::TeOnly),
            "te-and-cp" | "cp&te" | "te&cp" => Ok(Routing::TeAndCp),
            other => Err(Error::Config(format!("unknown routing `{other}`"))),
        }
    }
}

pub const INITIAL_LAYER_THRESHOLD: f64 = 0.5;

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub mode: ThresholdMode,
    pub routing: Routing,
    pub channels: usize,
    pub min_area: usize,
    pub predictor: Vec<LayerParams>,
    pub encoder: Vec<LayerParams>,
    pub layer_threshold: f64,
    pub predictor_moments: AdamMoments,
    pub encoder_moments: AdamMoments,
    /// Number of optimizer steps taken.
    pub step: u64,
    /// Number of completed epochs.
    pub epoch: usize,
}

impl ModelState {
    /// Fresh model. The predictor and the encoder draw from separate streams,
    /// so equal seeds give the same predictor in every mode.
    pub fn new(mode: ThresholdMode, routing: Routing, channels: usize, seed: u64) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Config("channels must be >= 1".into()));
        }
        if let ThresholdMode::Fixed(t) = mode {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::Config(format!("fixed threshold must be in (0, 1], got {t}")));
            }
        }
        let predictor = init_predictor(channels, &mut scene_rng(seed, 0));
        let encoder = match mode.encoder_kind() {
            Some(kind) => init_encoder(kind, channels, &mut scene_rng(seed, 2)),
            None => Vec::new(),
        };
        Ok(Self {
            mode,
            routing,
            channels,
            min_area: DEFAULT_MIN_AREA,
            predictor_moments: AdamMoments::for_params(&predictor),
            encoder_moments: AdamMoments::for_params(&encoder),
            predictor,
            encoder,
            layer_threshold: INITIAL_LAYER_THRESHOLD,
            step: 0,
            epoch: 0,
        })
    }

    /// Same weights, different fixed threshold (for evaluating one predictor
    /// at several global thresholds).
    pub fn with_fixed_threshold(&self, t: f64) -> Result<Self> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(Error::Config(format!("fixed threshold must be in (0, 1], got {t}")));
        }
        let mut m = self.clone();
        m.mode = ThresholdMode::Fixed(t);
        m.encoder.clear();
        m.encoder_moments = AdamMoments::for_params(&[]);
        Ok(m)
    }

    pub fn threshold_field(&self, conf: &ConfidenceMap, features: &FeatureStack) -> Result<ThresholdField> {
        self.binarize(conf, features).map(|(_, t)| t)
    }

    pub fn binarize(&self, conf: &ConfidenceMap, features: &FeatureStack) -> Result<(BinaryMap, ThresholdField)> {
        match self.mode {
            ThresholdMode::Fixed(t) => {
                let field = ThresholdField::Scalar(t);
                let (o, _) = binarize_forward(conf, &field)?;
                Ok((o, field))
            }
            ThresholdMode::Layer => {
                let field = ThresholdField::Scalar(self.layer_threshold);
                let (o, _) = binarize_forward(conf, &field)?;
                Ok((o, field))
            }
            ThresholdMode::Ibm | ThresholdMode::Pbm => {
                let kind = self.mode.encoder_kind().expect("encoder mode");
                let (o, tape) = bm_apply(conf, features, kind, &self.encoder)?;
                Ok((o, tape.threshold))
            }
        }
    }

    pub fn predict(&self, image: &Grid) -> Result<(ConfidenceMap, FeatureStack)> {
        predict_confidence(image, &self.predictor)
    }
}
