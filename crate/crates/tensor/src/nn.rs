//! Parameterised layers.

use rand::Rng;

use crate::kernels::ConvGeom;
use crate::{Float, ParamBuilder, ParamId, ParamVars, Var};

pub const LEAKY_SLOPE: f64 = 0.1;

/// Square-kernel convolution with bias and "same"-style padding `k / 2`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub geom: ConvGeom,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Conv2d {
    pub fn new<T: Float, R: Rng>(
        pb: &mut ParamBuilder<'_, T, R>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f64;
        let bound = (3.0 / fan_in).sqrt();
        Self::with_bound(pb, name, in_channels, out_channels, kernel, stride, bound)
    }

    /// Convolution whose weights start at zero (the layer initially outputs
    /// only its bias, zero).
    pub fn zeroed<T: Float, R: Rng>(
        pb: &mut ParamBuilder<'_, T, R>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    ) -> Self {
        Self::with_bound(pb, name, in_channels, out_channels, kernel, stride, 0.0)
    }

    pub fn with_bound<T: Float, R: Rng>(
        pb: &mut ParamBuilder<'_, T, R>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        bound: f64,
    ) -> Self {
        let mut s = pb.scope(name);
        let weight = s.uniform("weight", [out_channels, in_channels, kernel, kernel], bound);
        let bias = s.constant("bias", [1, out_channels, 1, 1], 0.0);
        Conv2d {
            weight,
            bias,
            geom: ConvGeom {
                kernel,
                stride,
                pad: kernel / 2,
            },
            in_channels,
            out_channels,
        }
    }

    pub fn forward<T: Float>(&self, p: &ParamVars<T>, x: &Var<T>) -> Var<T> {
        assert_eq!(
            x.shape()[1],
            self.in_channels,
            "conv expects {} input channels",
            self.in_channels
        );
        x.conv2d(&p[self.weight], Some(&p[self.bias]), self.geom)
    }
}

/// `x + conv(lrelu(conv(lrelu(x))))`.
#[derive(Clone, Debug)]
pub struct ResBlock {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
}

impl ResBlock {
    pub fn new<T: Float, R: Rng>(pb: &mut ParamBuilder<'_, T, R>, name: &str, channels: usize) -> Self {
        let mut s = pb.scope(name);
        ResBlock {
            conv1: Conv2d::new(&mut s, "conv1", channels, channels, 3, 1),
            conv2: Conv2d::new(&mut s, "conv2", channels, channels, 3, 1),
        }
    }

    pub fn forward<T: Float>(&self, p: &ParamVars<T>, x: &Var<T>) -> Var<T> {
        let h = self.conv1.forward(p, &x.leaky_relu(LEAKY_SLOPE));
        let h = self.conv2.forward(p, &h.leaky_relu(LEAKY_SLOPE));
        x.add(&h)
    }
}

/// Sub-pixel 2x upsampling: conv to `4 * out` channels then depth-to-space.
#[derive(Clone, Debug)]
pub struct SubpelUp {
    pub conv: Conv2d,
}

impl SubpelUp {
    pub fn new<T: Float, R: Rng>(
        pb: &mut ParamBuilder<'_, T, R>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
    ) -> Self {
        SubpelUp {
            conv: Conv2d::new(pb, name, in_channels, out_channels * 4, 3, 1),
        }
    }

    pub fn forward<T: Float>(&self, p: &ParamVars<T>, x: &Var<T>) -> Var<T> {
        self.conv.forward(p, x).pixel_shuffle2()
    }
}
