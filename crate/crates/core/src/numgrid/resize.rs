use super::FeatureStack;
use crate::error::{Error, Result};

/// Per-output-index source taps `(lo, hi, frac)` under the half-pixel
/// (align-corners = false) convention.
fn axis_taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f64)> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (src.floor() as usize).min(n_in - 1);
            let hi = (lo + 1).min(n_in - 1);
            (lo, hi, src - lo as f64)
        })
        .collect()
}

fn check_size(out_h: usize, out_w: usize) -> Result<()> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument(format!(
            "resize target must be at least 1x1, got {out_h}x{out_w}"
        )));
    }
    Ok(())
}

/// Bilinear resize. Interpolation is written as `a + t (b - a)` so constant
/// regions come out bit-exact.
pub fn resize_bilinear(input: &FeatureStack, out_h: usize, out_w: usize) -> Result<FeatureStack> {
    check_size(out_h, out_w)?;
    let (c, h, w) = input.shape();
    if (h, w) == (out_h, out_w) {
        return Ok(input.clone());
    }
    let ty = axis_taps(h, out_h);
    let tx = axis_taps(w, out_w);
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let src = input.channel(ch);
        for &(y0, y1, ly) in &ty {
            let r0 = &src[y0 * w..][..w];
            let r1 = &src[y1 * w..][..w];
            for &(x0, x1, lx) in &tx {
                let top = r0[x0] + lx * (r0[x1] - r0[x0]);
                let bot = r1[x0] + lx * (r1[x1] - r1[x0]);
                out.push(top + ly * (bot - top));
            }
        }
    }
    FeatureStack::new(c, out_h, out_w, out)
}

/// Scatter the output gradient back through the interpolation weights.
pub fn resize_bilinear_backward(
    grad_out: &FeatureStack,
    in_h: usize,
    in_w: usize,
) -> Result<FeatureStack> {
    check_size(in_h, in_w)?;
    let (c, out_h, out_w) = grad_out.shape();
    if (in_h, in_w) == (out_h, out_w) {
        return Ok(grad_out.clone());
    }
    let ty = axis_taps(in_h, out_h);
    let tx = axis_taps(in_w, out_w);
    let mut gi = vec![0.0; c * in_h * in_w];
    for ch in 0..c {
        let go = grad_out.channel(ch);
        let dst = &mut gi[ch * in_h * in_w..(ch + 1) * in_h * in_w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let g = go[oy * out_w + ox];
                let gt = g * (1.0 - ly);
                let gb = g * ly;
                dst[y0 * in_w + x0] += gt * (1.0 - lx);
                dst[y0 * in_w + x1] += gt * lx;
                dst[y1 * in_w + x0] += gb * (1.0 - lx);
                dst[y1 * in_w + x1] += gb * lx;
            }
        }
    }
    FeatureStack::new(c, in_h, in_w, gi)
}
