//! Threshold encoders: map confidence-masked features to a threshold field.
//!
//! The image-level encoder is a 1x1 conv followed by global average pooling,
//! giving one threshold per image. The pixel-level encoder works at 1/8 of
//! the input resolution: three 3x3 conv + PReLU layers, a 15x15 stride-1 box
//! mean, a 1x1 conv to one channel and another 15x15 box mean. Both end in the
//! compressed sigmoid. The pixel map is upsampled back to full resolution
//! before it is compared against the confidence map.
//!
//! Encoder inputs are detached: backward produces parameter gradients only.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    binarize_backward, binarize_forward, compressed_sigmoid, compressed_sigmoid_backward,
    compressed_sigmoid_derivative, compressed_sigmoid_scalar, BinarizeTape, BinaryMap,
    ConfidenceMap, ThresholdField, ThresholdGrad,
};
use crate::error::{Error, Result};
use crate::numgrid::{
    avgpool_box, avgpool_box_backward, conv2d_backward, conv2d_with, gap, gap_backward, prelu,
    prelu_backward, resize_bilinear, resize_bilinear_backward, FeatureStack, Grid, LayerParams,
    Pad,
};

/// Downsampling factor of the pixel-level encoder.
pub const PBM_SCALE: usize = 8;
/// Box-mean kernel of the pixel-level encoder.
pub const PBM_POOL: usize = 15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EncoderKind {
    /// One threshold per image.
    Ibm,
    /// One threshold per pixel.
    Pbm,
}

/// Fresh encoder parameters for `channels` input feature channels. Biases are
/// zero, so on an empty input the field sits at the compressed sigmoid's value
/// at 0 (about 0.533).
pub fn init_encoder<R: Rng + ?Sized>(kind: EncoderKind, channels: usize, rng: &mut R) -> Vec<LayerParams> {
    let mut layers = match kind {
        EncoderKind::Ibm => vec![LayerParams::kaiming("te.conv1x1", 1, channels, 1, rng)],
        EncoderKind::Pbm => vec![
            LayerParams::kaiming("te.conv1", channels, channels, 3, rng),
            LayerParams::kaiming("te.conv2", channels, channels, 3, rng),
            LayerParams::kaiming("te.conv3", channels, channels, 3, rng),
            LayerParams::kaiming("te.conv1x1", 1, channels, 1, rng),
        ],
    };
    layers.last_mut().expect("non-empty").slope = 0.0;
    layers
}

fn expect_layers(kind: EncoderKind, params: &[LayerParams]) -> Result<()> {
    let want = match kind {
        EncoderKind::Ibm => 1,
        EncoderKind::Pbm => 4,
    };
    if params.len() != want {
        return Err(Error::shape(
            "threshold encoder",
            format!("{want} layers"),
            format!("{} layers", params.len()),
        ));
    }
    Ok(())
}

fn masked_input(features: &FeatureStack, conf: &ConfidenceMap) -> Result<FeatureStack> {
    if features.spatial() != conf.shape() {
        let (h, w) = conf.shape();
        return Err(Error::shape(
            "threshold encoder",
            format!("features aligned with {h}x{w} confidence map"),
            format!("{}x{}", features.height(), features.width()),
        ));
    }
    features.hadamard(conf.grid())
}

/// Intermediates kept for the encoder backward pass.
#[derive(Clone, Debug)]
pub enum EncoderTape {
    Ibm {
        input: FeatureStack,
        pooled: f64,
    },
    Pbm {
        full_h: usize,
        full_w: usize,
        /// Conv inputs, pre-activations and pooled tensors in forward order.
        x8: FeatureStack,
        pre: [FeatureStack; 3],
        act: [FeatureStack; 3],
        pooled: FeatureStack,
        z: FeatureStack,
        logits: Grid,
    },
}

impl EncoderTape {
    pub fn kind(&self) -> EncoderKind {
        match self {
            EncoderTape::Ibm { .. } => EncoderKind::Ibm,
            EncoderTape::Pbm { .. } => EncoderKind::Pbm,
        }
    }
}

/// Image-level threshold: `csig(GAP(conv1x1(I * F)))`.
pub fn ibm_threshold(
    features: &FeatureStack,
    conf: &ConfidenceMap,
    params: &[LayerParams],
) -> Result<(ThresholdField, EncoderTape)> {
    expect_layers(EncoderKind::Ibm, params)?;
    let input = masked_input(features, conf)?;
    let z = conv2d_with(&input, &params[0], Pad::zero(0))?;
    let pooled = gap(&z)[0];
    Ok((
        ThresholdField::Scalar(compressed_sigmoid_scalar(pooled)),
        EncoderTape::Ibm { input, pooled },
    ))
}

fn reduced(n: usize) -> usize {
    ((n + PBM_SCALE / 2) / PBM_SCALE).max(1)
}

/// Pixel-level threshold map at full resolution, every value in (0.2, 0.7).
pub fn pbm_threshold(
    features: &FeatureStack,
    conf: &ConfidenceMap,
    params: &[LayerParams],
) -> Result<(ThresholdField, EncoderTape)> {
    expect_layers(EncoderKind::Pbm, params)?;
    let input = masked_input(features, conf)?;
    let (full_h, full_w) = input.spatial();
    let x8 = resize_bilinear(&input, reduced(full_h), reduced(full_w))?;

    let mut pre: Vec<FeatureStack> = Vec::with_capacity(3);
    let mut act: Vec<FeatureStack> = Vec::with_capacity(3);
    for layer in &params[..3] {
        let src = act.last().unwrap_or(&x8);
        let a = conv2d_with(src, layer, Pad::replicate(1))?;
        act.push(prelu(&a, layer.slope));
        pre.push(a);
    }
    let pooled = avgpool_box(&act[2], PBM_POOL)?;
    let z = conv2d_with(&pooled, &params[3], Pad::zero(0))?;
    let logits = avgpool_box(&z, PBM_POOL)?.into_grid()?;
    let small = compressed_sigmoid(&logits);
    let full = resize_bilinear(&small.into_stack(), full_h, full_w)?.into_grid()?;

    let pre: [FeatureStack; 3] = pre.try_into().expect("three layers");
    let act: [FeatureStack; 3] = act.try_into().expect("three layers");
    Ok((
        ThresholdField::Pixel(full),
        EncoderTape::Pbm {
            full_h,
            full_w,
            x8,
            pre,
            act,
            pooled,
            z,
            logits,
        },
    ))
}

/// Gradients of the encoder parameters given the loss gradient w.r.t. the
/// threshold field. With `need_input`, also returns the gradient w.r.t. the
/// masked encoder input (used only to demonstrate that it is cut off).
pub fn encoder_backward_full(
    tape: &EncoderTape,
    params: &[LayerParams],
    grad: &ThresholdGrad,
    need_input: bool,
) -> Result<(Vec<LayerParams>, Option<FeatureStack>)> {
    expect_layers(tape.kind(), params)?;
    match (tape, grad) {
        (EncoderTape::Ibm { input, pooled }, ThresholdGrad::Scalar(g)) => {
            let dz = g * compressed_sigmoid_derivative(*pooled);
            let gz = gap_backward(&[dz], input.height(), input.width());
            let cg = conv2d_backward(input, &params[0], Pad::zero(0), &gz, need_input)?;
            Ok((vec![cg.params], cg.input))
        }
        (
            EncoderTape::Pbm {
                full_h,
                full_w,
                x8,
                pre,
                act,
                pooled,
                z,
                logits,
            },
            ThresholdGrad::Pixel(g),
        ) => {
            if g.shape() != (*full_h, *full_w) {
                return Err(Error::shape(
                    "encoder_backward",
                    format!("{full_h}x{full_w}"),
                    format!("{}x{}", g.height(), g.width()),
                ));
            }
            let (h8, w8) = logits.shape();
            let g_small = resize_bilinear_backward(&g.clone().into_stack(), h8, w8)?.into_grid()?;
            let g_logits = compressed_sigmoid_backward(logits, &g_small)?;
            let g_z = avgpool_box_backward(&g_logits.into_stack(), PBM_POOL)?;
            debug_assert_eq!(g_z.shape(), z.shape());
            let last = conv2d_backward(pooled, &params[3], Pad::zero(0), &g_z, true)?;
            let mut upstream = avgpool_box_backward(&last.input.expect("requested"), PBM_POOL)?;

            let mut grads = vec![params[0].zeros_like(); 4];
            grads[3] = last.params;
            let mut input_grad = None;
            for l in (0..3).rev() {
                let pg = prelu_backward(&pre[l], params[l].slope, &upstream)?;
                let src = if l == 0 { x8 } else { &act[l - 1] };
                let want_input = l > 0 || need_input;
                let cg = conv2d_backward(src, &params[l], Pad::replicate(1), &pg.input, want_input)?;
                grads[l] = cg.params;
                grads[l].slope = pg.slope;
                if l > 0 {
                    upstream = cg.input.expect("requested");
                } else if need_input {
                    let gx8 = cg.input.expect("requested");
                    input_grad = Some(resize_bilinear_backward(&gx8, *full_h, *full_w)?);
                }
            }
            Ok((grads, input_grad))
        }
        _ => Err(Error::InvalidArgument(
            "threshold gradient kind does not match encoder".into(),
        )),
    }
}

pub fn encoder_backward(
    tape: &EncoderTape,
    params: &[LayerParams],
    grad: &ThresholdGrad,
) -> Result<Vec<LayerParams>> {
    encoder_backward_full(tape, params, grad, false).map(|(g, _)| g)
}

/// Tape of a full binarization-module pass.
#[derive(Clone, Debug)]
pub struct BmTape {
    pub threshold: ThresholdField,
    pub binarize: BinarizeTape,
    pub encoder: EncoderTape,
    feature_shape: (usize, usize, usize),
}

#[derive(Clone, Debug)]
pub struct BmGrads {
    /// Straight-through gradient w.r.t. the confidence map.
    pub conf: Grid,
    /// Gradient w.r.t. the backbone features; identically zero (detached).
    pub features: FeatureStack,
    /// Threshold-encoder parameter gradients.
    pub encoder: Vec<LayerParams>,
}

/// Threshold encoder followed by the binarization layer.
pub fn bm_apply(
    conf: &ConfidenceMap,
    features: &FeatureStack,
    kind: EncoderKind,
    params: &[LayerParams],
) -> Result<(BinaryMap, BmTape)> {
    let (threshold, encoder) = match kind {
        EncoderKind::Ibm => ibm_threshold(features, conf, params)?,
        EncoderKind::Pbm => pbm_threshold(features, conf, params)?,
    };
    let (out, binarize) = binarize_forward(conf, &threshold)?;
    Ok((
        out,
        BmTape {
            threshold,
            binarize,
            encoder,
            feature_shape: features.shape(),
        },
    ))
}

pub fn bm_backward(tape: &BmTape, params: &[LayerParams], upstream: &Grid) -> Result<BmGrads> {
    let bg = binarize_backward(&tape.binarize, upstream)?;
    let encoder = encoder_backward(&tape.encoder, params, &bg.threshold)?;
    let (c, h, w) = tape.feature_shape;
    Ok(BmGrads {
        conf: bg.conf,
        features: FeatureStack::zeros(c, h, w),
        encoder,
    })
}
