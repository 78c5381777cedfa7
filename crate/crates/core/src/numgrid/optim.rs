use serde::{Deserialize, Serialize};

use super::LayerParams;
use crate::error::{Error, Result};

/// Learning rates and Adam constants.
///
/// `lr_confidence` drives the confidence predictor, `lr_threshold` the
/// threshold encoder, and `lr_layer` the bare scalar threshold of a
/// stand-alone binarization layer (plain gradient descent). All three are
/// multiplied by `decay` once per epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr_confidence: f64,
    pub lr_threshold: f64,
    pub lr_layer: f64,
    pub decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr_confidence: 1e-3,
            lr_threshold: 1e-4,
            lr_layer: 1e-2,
            decay: 0.99,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lr_confidence", self.lr_confidence),
            ("lr_threshold", self.lr_threshold),
            ("lr_layer", self.lr_layer),
            ("eps", self.eps),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!("decay must be in (0, 1], got {}", self.decay)));
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

/// First and second moment estimates for one parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamMoments {
    pub m: Vec<LayerParams>,
    pub v: Vec<LayerParams>,
}

impl AdamMoments {
    pub fn for_params(params: &[LayerParams]) -> Self {
        Self {
            m: params.iter().map(LayerParams::zeros_like).collect(),
            v: params.iter().map(LayerParams::zeros_like).collect(),
        }
    }
}

fn check_grads(params: &[LayerParams], grads: &[LayerParams]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} gradient layers", params.len()),
            format!("{} gradient layers", grads.len()),
        ));
    }
    for (p, g) in params.iter().zip(grads) {
        if !p.same_shape(g) {
            return Err(Error::shape("adam_step", &p.name, format!("gradient `{}`", g.name)));
        }
        if g.weight.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(format!("{}.weight", p.name)));
        }
        if g.bias.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteGradient(format!("{}.bias", p.name)));
        }
        if !g.slope.is_finite() {
            return Err(Error::NonFiniteGradient(format!("{}.slope", p.name)));
        }
    }
    Ok(())
}

/// One bias-corrected Adam update of a parameter group at learning rate `lr`.
/// `step` counts from 1. Nothing is modified when validation fails.
pub fn adam_step(
    params: &mut [LayerParams],
    grads: &[LayerParams],
    moments: &mut AdamMoments,
    lr: f64,
    cfg: &OptimizerConfig,
    step: u64,
) -> Result<()> {
    if step == 0 {
        return Err(Error::InvalidArgument("adam step counter starts at 1".into()));
    }
    check_grads(params, grads)?;
    if moments.m.len() != params.len() || moments.v.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!("{} moment layers", params.len()),
            format!("{}", moments.m.len()),
        ));
    }
    let c1 = 1.0 - cfg.beta1.powi(step as i32);
    let c2 = 1.0 - cfg.beta2.powi(step as i32);
    let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let mh = *m / c1;
        let vh = *v / c2;
        *p -= lr * mh / (vh.sqrt() + cfg.eps);
    };
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(moments.m.iter_mut())
        .zip(moments.v.iter_mut())
    {
        for i in 0..p.weight.len() {
            update(&mut p.weight[i], g.weight[i], &mut m.weight[i], &mut v.weight[i]);
        }
        for i in 0..p.bias.len() {
            update(&mut p.bias[i], g.bias[i], &mut m.bias[i], &mut v.bias[i]);
        }
        update(&mut p.slope, g.slope, &mut m.slope, &mut v.slope);
    }
    Ok(())
}
