use super::FeatureStack;
use crate::error::{Error, Result};

/// `x` for `x >= 0`, `slope * x` otherwise.
pub fn prelu(input: &FeatureStack, slope: f64) -> FeatureStack {
    let mut out = input.clone();
    for v in out.values_mut() {
        if *v < 0.0 {
            *v *= slope;
        }
    }
    out
}

pub struct PreluGrads {
    pub input: FeatureStack,
    pub slope: f64,
}

pub fn prelu_backward(input: &FeatureStack, slope: f64, grad_out: &FeatureStack) -> Result<PreluGrads> {
    if input.shape() != grad_out.shape() {
        return Err(Error::shape(
            "prelu_backward",
            format!("{:?}", input.shape()),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let mut gi = grad_out.clone();
    let mut gs = 0.0;
    for ((g, &x), &go) in gi.values_mut().iter_mut().zip(input.values()).zip(grad_out.values()) {
        if x < 0.0 {
            *g = slope * go;
            gs += x * go;
        }
    }
    Ok(PreluGrads {
        input: gi,
        slope: gs,
    })
}

#[inline]
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(input: &FeatureStack) -> FeatureStack {
    let mut out = input.clone();
    out.values_mut().iter_mut().for_each(|v| *v = logistic(*v));
    out
}

/// Backward from the forward *output* `y`: `dy/dx = y (1 - y)`.
pub fn sigmoid_backward(output: &FeatureStack, grad_out: &FeatureStack) -> Result<FeatureStack> {
    if output.shape() != grad_out.shape() {
        return Err(Error::shape(
            "sigmoid_backward",
            format!("{:?}", output.shape()),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let mut g = grad_out.clone();
    for (gv, &y) in g.values_mut().iter_mut().zip(output.values()) {
        *gv *= y * (1.0 - y);
    }
    Ok(g)
}
