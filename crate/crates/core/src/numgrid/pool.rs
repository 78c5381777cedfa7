use super::FeatureStack;
use crate::error::{Error, Result};

fn check_kernel(kernel: usize) -> Result<()> {
    if kernel == 0 || kernel % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "average pooling kernel must be odd, got {kernel}"
        )));
    }
    Ok(())
}

#[inline]
fn clamp(p: isize, n: usize) -> usize {
    p.clamp(0, n as isize - 1) as usize
}

/// Stride-1 `kernel x kernel` box mean with replicate-edge padding; output has
/// the input's size.
pub fn avgpool_box(input: &FeatureStack, kernel: usize) -> Result<FeatureStack> {
    check_kernel(kernel)?;
    let (c, h, w) = input.shape();
    let r = (kernel / 2) as isize;
    let area = (kernel * kernel) as f64;
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        let src = input.channel(ch);
        let dst = &mut out[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for dy in -r..=r {
                    let row = &src[clamp(y as isize + dy, h) * w..][..w];
                    for dx in -r..=r {
                        acc += row[clamp(x as isize + dx, w)];
                    }
                }
                dst[y * w + x] = acc / area;
            }
        }
    }
    FeatureStack::new(c, h, w, out)
}

pub fn avgpool_box_backward(grad_out: &FeatureStack, kernel: usize) -> Result<FeatureStack> {
    check_kernel(kernel)?;
    let (c, h, w) = grad_out.shape();
    let r = (kernel / 2) as isize;
    let area = (kernel * kernel) as f64;
    let mut gi = vec![0.0; c * h * w];
    for ch in 0..c {
        let go = grad_out.channel(ch);
        let dst = &mut gi[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                let share = go[y * w + x] / area;
                for dy in -r..=r {
                    let row = clamp(y as isize + dy, h) * w;
                    for dx in -r..=r {
                        dst[row + clamp(x as isize + dx, w)] += share;
                    }
                }
            }
        }
    }
    FeatureStack::new(c, h, w, gi)
}

/// Global average pooling: one spatial mean per channel.
pub fn gap(input: &FeatureStack) -> Vec<f64> {
    let n = input.plane_len() as f64;
    (0..input.channels())
        .map(|c| input.channel(c).iter().sum::<f64>() / n)
        .collect()
}

pub fn gap_backward(grad_out: &[f64], height: usize, width: usize) -> FeatureStack {
    let n = height * width;
    let mut values = Vec::with_capacity(grad_out.len() * n);
    for &g in grad_out {
        values.extend(std::iter::repeat_n(g / n as f64, n));
    }
    FeatureStack::new(grad_out.len(), height, width, values).expect("finite gradient")
}
