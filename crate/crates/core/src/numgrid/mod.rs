//! Dense rasters and the small set of differentiable layers the predictor and
//! threshold encoders are built from.
//!
//! Every layer comes as a forward/backward pair. Backward functions take the
//! forward inputs again (nothing is cached behind the caller's back) plus the
//! upstream gradient, and return gradients with the same shapes as the
//! corresponding forward arguments. All arithmetic is `f64`.

mod activation;
mod conv;
mod loss;
mod optim;
mod pool;
mod resize;

#[cfg(test)]
pub(crate) mod testutil;

pub use activation::{prelu, prelu_backward, sigmoid, sigmoid_backward, PreluGrads};
pub use conv::{conv2d, conv2d_backward, conv2d_with, ConvGrads, Pad, PadMode};
pub use loss::{l1_loss, mse_loss, Loss};
pub use optim::{adam_step, AdamMoments, OptimizerConfig};
pub use pool::{avgpool_box, avgpool_box_backward, gap, gap_backward};
pub use resize::{resize_bilinear, resize_bilinear_backward};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

fn check_finite(op: &'static str, values: &[f64]) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteValue(format!("{op}: {} at index {i}", values[i])));
    }
    Ok(())
}

/// Single-channel `height x width` raster stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl Grid {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "grid must be at least 1x1, got {height}x{width}"
            )));
        }
        if values.len() != height * width {
            return Err(Error::shape(
                "Grid::new",
                format!("{} values", height * width),
                format!("{} values", values.len()),
            ));
        }
        check_finite("Grid::new", &values)?;
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "grid must be at least 1x1");
        Self {
            height,
            width,
            values: vec![value; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "grid must be at least 1x1");
        let mut values = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                values.push(f(y, x));
            }
        }
        Self {
            height,
            width,
            values,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.values[y * self.width + x] = v;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.values.len() as f64
    }

    pub fn transpose(&self) -> Grid {
        Grid::from_fn(self.width, self.height, |y, x| self.get(x, y))
    }

    /// Mirror left-right.
    pub fn flip_horizontal(&self) -> Grid {
        Grid::from_fn(self.height, self.width, |y, x| {
            self.get(y, self.width - 1 - x)
        })
    }

    pub fn into_stack(self) -> FeatureStack {
        FeatureStack {
            channels: 1,
            height: self.height,
            width: self.width,
            values: self.values,
        }
    }
}

/// `channels x height x width` raster, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureStack {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl FeatureStack {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidArgument(format!(
                "feature stack must be at least 1x1x1, got {channels}x{height}x{width}"
            )));
        }
        if values.len() != channels * height * width {
            return Err(Error::shape(
                "FeatureStack::new",
                format!("{} values", channels * height * width),
                format!("{} values", values.len()),
            ));
        }
        check_finite("FeatureStack::new", &values)?;
        Ok(Self {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        assert!(channels > 0 && height > 0 && width > 0);
        Self {
            channels,
            height,
            width,
            values: vec![0.0; channels * height * width],
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn spatial(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.values[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.values[(c * self.height + y) * self.width + x]
    }

    /// Extract channel `c` as a grid.
    pub fn to_grid(&self, c: usize) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
            values: self.channel(c).to_vec(),
        }
    }

    /// Consume a single-channel stack.
    pub fn into_grid(self) -> Result<Grid> {
        if self.channels != 1 {
            return Err(Error::shape(
                "FeatureStack::into_grid",
                "1 channel",
                format!("{} channels", self.channels),
            ));
        }
        Ok(Grid {
            height: self.height,
            width: self.width,
            values: self.values,
        })
    }

    /// Multiply every channel by `mask` pixelwise.
    pub fn hadamard(&self, mask: &Grid) -> Result<FeatureStack> {
        if mask.shape() != self.spatial() {
            return Err(Error::shape(
                "hadamard",
                format!("{}x{}", self.height, self.width),
                format!("{}x{}", mask.height(), mask.width()),
            ));
        }
        let mut out = self.clone();
        let n = self.plane_len();
        for plane in out.values.chunks_mut(n) {
            for (v, m) in plane.iter_mut().zip(mask.values()) {
                *v *= m;
            }
        }
        Ok(out)
    }
}

impl From<Grid> for FeatureStack {
    fn from(g: Grid) -> Self {
        g.into_stack()
    }
}

/// Weights of one convolution layer plus the PReLU slope that follows it.
///
/// The same type doubles as the gradient and optimizer-moment container, so
/// every buffer has the shape of the layer it belongs to.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub name: String,
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    /// `out x in x kh x kw`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub slope: f64,
}

impl LayerParams {
    pub fn zeros(
        name: impl Into<String>,
        out_channels: usize,
        in_channels: usize,
        kernel_h: usize,
        kernel_w: usize,
    ) -> Self {
        Self {
            name: name.into(),
            out_channels,
            in_channels,
            kernel_h,
            kernel_w,
            weight: vec![0.0; out_channels * in_channels * kernel_h * kernel_w],
            bias: vec![0.0; out_channels],
            slope: 0.0,
        }
    }

    /// He-normal weights, zero bias, PReLU slope 0.25.
    pub fn kaiming<R: Rng + ?Sized>(
        name: impl Into<String>,
        out_channels: usize,
        in_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        let mut p = Self::zeros(name, out_channels, in_channels, kernel, kernel);
        let fan_in = (in_channels * kernel * kernel) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid std");
        for w in &mut p.weight {
            *w = normal.sample(rng);
        }
        p.slope = 0.25;
        p
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(
            self.name.clone(),
            self.out_channels,
            self.in_channels,
            self.kernel_h,
            self.kernel_w,
        )
    }

    #[inline]
    pub fn weight_index(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_channels + i) * self.kernel_h + ky) * self.kernel_w + kx
    }

    pub fn same_shape(&self, other: &LayerParams) -> bool {
        self.out_channels == other.out_channels
            && self.in_channels == other.in_channels
            && self.kernel_h == other.kernel_h
            && self.kernel_w == other.kernel_w
            && self.weight.len() == other.weight.len()
            && self.bias.len() == other.bias.len()
    }

    /// Accumulate `other` into `self` elementwise.
    pub fn add_assign(&mut self, other: &LayerParams) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.weight.iter_mut().zip(&other.weight) {
            *a += b;
        }
        for (a, b) in self.bias.iter_mut().zip(&other.bias) {
            *a += b;
        }
        self.slope += other.slope;
    }

    pub fn scale(&mut self, k: f64) {
        self.weight.iter_mut().for_each(|w| *w *= k);
        self.bias.iter_mut().for_each(|b| *b *= k);
        self.slope *= k;
    }

    pub fn is_zero(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|&v| v == 0.0) && self.slope == 0.0
    }
}
