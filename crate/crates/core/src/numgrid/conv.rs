use super::{FeatureStack, LayerParams};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PadMode {
    #[default]
    Zero,
    /// Out-of-range reads clamp to the nearest edge pixel.
    Replicate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pad {
    pub size: usize,
    pub mode: PadMode,
}

impl Pad {
    pub fn zero(size: usize) -> Self {
        Self {
            size,
            mode: PadMode::Zero,
        }
    }

    pub fn replicate(size: usize) -> Self {
        Self {
            size,
            mode: PadMode::Replicate,
        }
    }
}

pub struct ConvGrads {
    /// `None` when the caller asked not to propagate into the input.
    pub input: Option<FeatureStack>,
    pub params: LayerParams,
}

struct Geometry {
    hp: usize,
    wp: usize,
    ho: usize,
    wo: usize,
}

fn geometry(input: &FeatureStack, params: &LayerParams, pad: Pad) -> Result<Geometry> {
    if input.channels() != params.in_channels {
        return Err(Error::shape(
            "conv2d",
            format!("{} input channels", params.in_channels),
            format!("{} input channels", input.channels()),
        ));
    }
    if params.weight.len()
        != params.out_channels * params.in_channels * params.kernel_h * params.kernel_w
        || params.bias.len() != params.out_channels
    {
        return Err(Error::shape(
            "conv2d",
            "weight/bias consistent with layer dims",
            format!(
                "{} weights, {} biases for {}x{}x{}x{}",
                params.weight.len(),
                params.bias.len(),
                params.out_channels,
                params.in_channels,
                params.kernel_h,
                params.kernel_w
            ),
        ));
    }
    let hp = input.height() + 2 * pad.size;
    let wp = input.width() + 2 * pad.size;
    if params.kernel_h == 0 || params.kernel_w == 0 || params.kernel_h > hp || params.kernel_w > wp {
        return Err(Error::shape(
            "conv2d",
            format!("kernel at most {hp}x{wp} (padded input)"),
            format!("{}x{}", params.kernel_h, params.kernel_w),
        ));
    }
    Ok(Geometry {
        hp,
        wp,
        ho: hp - params.kernel_h + 1,
        wo: wp - params.kernel_w + 1,
    })
}

#[inline]
fn source_index(p: isize, n: usize, mode: PadMode) -> Option<usize> {
    if p >= 0 && (p as usize) < n {
        Some(p as usize)
    } else {
        match mode {
            PadMode::Zero => None,
            PadMode::Replicate => Some(p.clamp(0, n as isize - 1) as usize),
        }
    }
}

fn padded(input: &FeatureStack, pad: Pad, g: &Geometry) -> Vec<f64> {
    let (c, h, w) = input.shape();
    let mut out = vec![0.0; c * g.hp * g.wp];
    let p = pad.size as isize;
    for ch in 0..c {
        let src = input.channel(ch);
        let dst = &mut out[ch * g.hp * g.wp..(ch + 1) * g.hp * g.wp];
        for yp in 0..g.hp {
            let Some(y) = source_index(yp as isize - p, h, pad.mode) else {
                continue;
            };
            for xp in 0..g.wp {
                if let Some(x) = source_index(xp as isize - p, w, pad.mode) {
                    dst[yp * g.wp + xp] = src[y * w + x];
                }
            }
        }
    }
    out
}

/// Stride-1 cross-correlation with zero padding.
pub fn conv2d(input: &FeatureStack, params: &LayerParams, padding: usize) -> Result<FeatureStack> {
    conv2d_with(input, params, Pad::zero(padding))
}

/// Stride-1 cross-correlation: `out[o] = bias[o] + sum_i w[o,i] * in[i]`.
pub fn conv2d_with(input: &FeatureStack, params: &LayerParams, pad: Pad) -> Result<FeatureStack> {
    let g = geometry(input, params, pad)?;
    let src = padded(input, pad, &g);
    let (kh, kw) = (params.kernel_h, params.kernel_w);
    let plane_in = g.hp * g.wp;
    let plane_out = g.ho * g.wo;
    let mut out = vec![0.0; params.out_channels * plane_out];

    for (o, dst_plane) in out.chunks_mut(plane_out).enumerate() {
        dst_plane.fill(params.bias[o]);
        for i in 0..params.in_channels {
            let src_plane = &src[i * plane_in..(i + 1) * plane_in];
            for ky in 0..kh {
                for kx in 0..kw {
                    let w = params.weight[params.weight_index(o, i, ky, kx)];
                    for y in 0..g.ho {
                        let s = &src_plane[(y + ky) * g.wp + kx..][..g.wo];
                        let d = &mut dst_plane[y * g.wo..][..g.wo];
                        for (dv, sv) in d.iter_mut().zip(s) {
                            *dv += w * sv;
                        }
                    }
                }
            }
        }
    }
    FeatureStack::new(params.out_channels, g.ho, g.wo, out)
}

/// Gradients of a scalar loss w.r.t. weights, bias and (optionally) input,
/// given the loss gradient w.r.t. the conv output.
pub fn conv2d_backward(
    input: &FeatureStack,
    params: &LayerParams,
    pad: Pad,
    grad_out: &FeatureStack,
    need_input: bool,
) -> Result<ConvGrads> {
    let g = geometry(input, params, pad)?;
    if grad_out.shape() != (params.out_channels, g.ho, g.wo) {
        return Err(Error::shape(
            "conv2d_backward",
            format!("{}x{}x{}", params.out_channels, g.ho, g.wo),
            format!("{:?}", grad_out.shape()),
        ));
    }
    let src = padded(input, pad, &g);
    let (kh, kw) = (params.kernel_h, params.kernel_w);
    let plane_in = g.hp * g.wp;
    let mut grads = params.zeros_like();
    let mut grad_src = if need_input {
        vec![0.0; params.in_channels * plane_in]
    } else {
        Vec::new()
    };

    for o in 0..params.out_channels {
        let go = grad_out.channel(o);
        grads.bias[o] = go.iter().sum();
        for i in 0..params.in_channels {
            let src_plane = &src[i * plane_in..(i + 1) * plane_in];
            for ky in 0..kh {
                for kx in 0..kw {
                    let widx = params.weight_index(o, i, ky, kx);
                    let mut acc = 0.0;
                    for y in 0..g.ho {
                        let s = &src_plane[(y + ky) * g.wp + kx..][..g.wo];
                        let gr = &go[y * g.wo..][..g.wo];
                        acc += s.iter().zip(gr).map(|(a, b)| a * b).sum::<f64>();
                    }
                    grads.weight[widx] = acc;
                    if need_input {
                        let w = params.weight[widx];
                        let gs = &mut grad_src[i * plane_in..(i + 1) * plane_in];
                        for y in 0..g.ho {
                            let d = &mut gs[(y + ky) * g.wp + kx..][..g.wo];
                            let gr = &go[y * g.wo..][..g.wo];
                            for (dv, gv) in d.iter_mut().zip(gr) {
                                *dv += w * gv;
                            }
                        }
                    }
                }
            }
        }
    }

    let input_grad = if need_input {
        let (c, h, w) = input.shape();
        let mut gi = vec![0.0; c * h * w];
        let p = pad.size as isize;
        for ch in 0..c {
            let gs = &grad_src[ch * plane_in..(ch + 1) * plane_in];
            let dst = &mut gi[ch * h * w..(ch + 1) * h * w];
            for yp in 0..g.hp {
                let Some(y) = source_index(yp as isize - p, h, pad.mode) else {
                    continue;
                };
                for xp in 0..g.wp {
                    if let Some(x) = source_index(xp as isize - p, w, pad.mode) {
                        dst[y * w + x] += gs[yp * g.wp + xp];
                    }
                }
            }
        }
        Some(FeatureStack::new(c, h, w, gi)?)
    } else {
        None
    };

    Ok(ConvGrads {
        input: input_grad,
        params: grads,
    })
}
