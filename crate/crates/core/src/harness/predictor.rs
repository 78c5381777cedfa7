//! Desk-scale confidence predictor: three 3x3 conv + PReLU layers at full
//! resolution, then a 3x3 conv to one channel and a sigmoid. The last hidden
//! activation is the feature map handed to the threshold encoder.

use rand::Rng;

use crate::binarize::ConfidenceMap;
use crate::error::{Error, Result};
use crate::numgrid::{
    conv2d_backward, conv2d_with, prelu, prelu_backward, sigmoid, sigmoid_backward, FeatureStack, Grid,
    LayerParams, Pad,
};

pub const PREDICTOR_LAYERS: usize = 4;
/// Images in [0, 1] are mapped to roughly [-1, 1] before the first layer.
const INPUT_CENTER: f64 = 0.5;
const INPUT_SCALE: f64 = 2.0;
/// Initial output logit; starts the confidence near the foreground rate.
const HEAD_BIAS: f64 = -2.0;
const HIDDEN: usize = 3;

pub fn init_predictor<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Vec<LayerParams> {
    let mut layers = vec![LayerParams::kaiming("cp.conv1", channels, 1, 3, rng)];
    for i in 2..=HIDDEN {
        layers.push(LayerParams::kaiming(format!("cp.conv{i}"), channels, channels, 3, rng));
    }
    let mut head = LayerParams::kaiming("cp.conv4", 1, channels, 3, rng);
    head.weight.iter_mut().for_each(|w| *w *= 0.1);
    head.slope = 0.0;
    head.bias[0] = HEAD_BIAS;
    layers.push(head);
    layers
}

fn check_layers(params: &[LayerParams]) -> Result<()> {
    if params.len() != PREDICTOR_LAYERS {
        return Err(Error::shape(
            "predictor",
            format!("{PREDICTOR_LAYERS} layers"),
            format!("{} layers", params.len()),
        ));
    }
    Ok(())
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct PredictorTape {
    input: FeatureStack,
    pre: Vec<FeatureStack>,
    act: Vec<FeatureStack>,
    out: FeatureStack,
}

pub fn predictor_forward(
    image: &Grid,
    params: &[LayerParams],
) -> Result<(ConfidenceMap, FeatureStack, PredictorTape)> {
    check_layers(params)?;
    let input = image.map(|v| (v - INPUT_CENTER) * INPUT_SCALE).into_stack();
    let mut pre = Vec::with_capacity(HIDDEN);
    let mut act: Vec<FeatureStack> = Vec::with_capacity(HIDDEN);
    for layer in &params[..HIDDEN] {
        let src = act.last().unwrap_or(&input);
        let a = conv2d_with(src, layer, Pad::replicate(1))?;
        act.push(prelu(&a, layer.slope));
        pre.push(a);
    }
    let logits = conv2d_with(&act[HIDDEN - 1], &params[HIDDEN], Pad::replicate(1))?;
    let out = sigmoid(&logits);
    let conf = ConfidenceMap::new(out.to_grid(0))?;
    let features = act[HIDDEN - 1].clone();
    Ok((conf, features, PredictorTape { input, pre, act, out }))
}

/// Confidence map and the feature map for the threshold encoder.
pub fn predict_confidence(image: &Grid, params: &[LayerParams]) -> Result<(ConfidenceMap, FeatureStack)> {
    predictor_forward(image, params).map(|(c, f, _)| (c, f))
}

/// Parameter gradients given the loss gradient w.r.t. the confidence map.
pub fn predictor_backward(
    tape: &PredictorTape,
    params: &[LayerParams],
    grad_conf: &Grid,
) -> Result<Vec<LayerParams>> {
    check_layers(params)?;
    let g_logits = sigmoid_backward(&tape.out, &grad_conf.clone().into_stack())?;
    let head = conv2d_backward(&tape.act[HIDDEN - 1], &params[HIDDEN], Pad::replicate(1), &g_logits, true)?;
    let mut grads = vec![params[0].zeros_like(); PREDICTOR_LAYERS];
    grads[HIDDEN] = head.params;
    let mut upstream = head.input.expect("requested");
    for l in (0..HIDDEN).rev() {
        let pg = prelu_backward(&tape.pre[l], params[l].slope, &upstream)?;
        let src = if l == 0 { &tape.input } else { &tape.act[l - 1] };
        let cg = conv2d_backward(src, &params[l], Pad::replicate(1), &pg.input, l > 0)?;
        grads[l] = cg.params;
        grads[l].slope = pg.slope;
        if l > 0 {
            upstream = cg.input.expect("requested");
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numgrid::testutil::*;

    fn loss(params: &[LayerParams], image: &Grid, probe: &Grid) -> f64 {
        let (c, _, _) = predictor_forward(image, params).unwrap();
        c.grid().values().iter().zip(probe.values()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn output_in_unit_interval() {
        let mut r = rng(3);
        let p = init_predictor(4, &mut r);
        let img = Grid::new(16, 12, randn_vec(&mut r, 192)).unwrap();
        let (c, f, _) = predictor_forward(&img, &p).unwrap();
        assert!(c.grid().values().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(f.shape(), (4, 16, 12));
    }

    #[test]
    fn constant_image_gives_constant_confidence() {
        let mut r = rng(4);
        let p = init_predictor(6, &mut r);
        for v in [0.0, 0.37] {
            let (c, _, _) = predictor_forward(&Grid::filled(20, 24, v), &p).unwrap();
            let first = c.grid().values()[0];
            assert!(c.grid().values().iter().all(|&x| x == first));
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut r = rng(5);
        let p = init_predictor(3, &mut r);
        let img = Grid::new(7, 6, randn_vec(&mut r, 42)).unwrap();
        let probe = Grid::new(7, 6, randn_vec(&mut r, 42)).unwrap();
        let (_, _, tape) = predictor_forward(&img, &p).unwrap();
        let grads = predictor_backward(&tape, &p, &probe).unwrap();
        for l in 0..PREDICTOR_LAYERS {
            let mut flat = p[l].weight.clone();
            flat.extend(&p[l].bias);
            flat.push(p[l].slope);
            let nw = p[l].weight.len();
            let nb = p[l].bias.len();
            let f = |x: &[f64]| {
                let mut q = p.clone();
                q[l].weight.copy_from_slice(&x[..nw]);
                q[l].bias.copy_from_slice(&x[nw..nw + nb]);
                q[l].slope = x[nw + nb];
                loss(&q, &img, &probe)
            };
            let num = numeric_grad(f, &flat, FD_STEP);
            let mut ana = grads[l].weight.clone();
            ana.extend(&grads[l].bias);
            ana.push(grads[l].slope);
            assert!(rel_err(&ana, &num) < 1e-6, "layer {l}: {}", rel_err(&ana, &num));
        }
    }

    #[test]
    fn rejects_wrong_layer_count() {
        let mut r = rng(6);
        let p = init_predictor(2, &mut r);
        assert!(predictor_forward(&Grid::zeros(4, 4), &p[..3]).is_err());
    }
}
