//! Flow estimation, the motion autoencoder and flow pyramids.

use ltvc_tensor::nn::{Conv2d, SubpelUp, LEAKY_SLOPE};
use ltvc_tensor::{concat, Float, ParamBuilder, ParamVars, Tensor, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::latent::HyperPrior;

/// Convolutions per pyramid level of the flow estimator, output layer included.
const FLOW_LAYERS: usize = 6;

#[derive(Clone, Debug)]
struct FlowLevel {
    convs: Vec<Conv2d>,
}

/// Coarse-to-fine residual flow estimator over a 3-level image pyramid.
#[derive(Clone, Debug)]
pub struct FlowNet {
    levels: Vec<FlowLevel>,
}

impl FlowNet {
    pub fn new<T: Float, R: Rng>(pb: &mut ParamBuilder<'_, T, R>, name: &str, width: usize) -> Self {
        let mut s = pb.scope(name);
        let levels = (0..3)
            .map(|l| {
                let mut ls = s.scope(&format!("level{l}"));
                let mut convs = Vec::with_capacity(FLOW_LAYERS);
                convs.push(Conv2d::new(&mut ls, "conv0", 8, width, 3, 1));
                for i in 1..FLOW_LAYERS - 1 {
                    convs.push(Conv2d::new(&mut ls, &format!("conv{i}"), width, width, 3, 1));
                }
                // the residual starts at zero so an untrained level passes its input flow through
                convs.push(Conv2d::zeroed(&mut ls, "out", width, 2, 3, 1));
                FlowLevel { convs }
            })
            .collect();
        FlowNet { levels }
    }

    /// Flow `[N, 2, H, W]` that warps `reference` towards `x`; both inputs
    /// `[N, 3, H, W]` with `H`, `W` divisible by 4.
    pub fn forward<T: Float>(&self, p: &ParamVars<T>, x: &Var<T>, reference: &Var<T>) -> Result<Var<T>> {
        let [n, c, h, w] = x.shape();
        if reference.shape() != x.shape() || c != 3 {
            return Err(Error::dim(format!(
                "flow inputs {:?} and {:?} must be equal [N,3,H,W]",
                x.shape(),
                reference.shape()
            )));
        }
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::dim(format!("flow input {w}x{h} not divisible by 4")));
        }
        let xs = [x.clone(), x.avg_pool2(), x.avg_pool2().avg_pool2()];
        let rs = [
            reference.clone(),
            reference.avg_pool2(),
            reference.avg_pool2().avg_pool2(),
        ];
        let mut flow = Var::constant(Tensor::zeros([n, 2, h / 4, w / 4]));
        for l in (0..3).rev() {
            if l < 2 {
                flow = flow.upsample2().scale(2.0);
            }
            let warped = rs[l].warp(&flow);
            let mut hdn = concat(&[&xs[l], &warped, &flow]);
            let convs = &self.levels[l].convs;
            for conv in &convs[..convs.len() - 1] {
                hdn = conv.forward(p, &hdn).leaky_relu(LEAKY_SLOPE);
            }
            flow = flow.add(&convs[convs.len() - 1].forward(p, &hdn));
        }
        Ok(flow)
    }
}

/// Flow at full, half and quarter resolution. Each step averages 2x2
/// blocks and halves the displacement (grid units of the coarser level).
pub fn flow_pyramid<T: Float>(v: &Var<T>) -> Result<[Var<T>; 3]> {
    let [_, c, h, w] = v.shape();
    if c != 2 {
        return Err(Error::dim(format!("flow must have 2 channels, got {c}")));
    }
    if h % 4 != 0 || w % 4 != 0 {
        return Err(Error::dim(format!("flow {w}x{h} cannot be halved twice")));
    }
    let v2 = v.avg_pool2().scale(0.5);
    let v3 = v2.avg_pool2().scale(0.5);
    Ok([v.clone(), v2, v3])
}

/// Analysis/synthesis transforms for flow fields with a mean-scale hyperprior.
#[derive(Clone, Debug)]
pub struct MotionCodec {
    enc: [Conv2d; 4],
    dec: [SubpelUp; 4],
    pub hyper: HyperPrior,
    pub latent_channels: usize,
}

impl MotionCodec {
    pub fn new<T: Float, R: Rng>(
        pb: &mut ParamBuilder<'_, T, R>,
        name: &str,
        width: usize,
        latent: usize,
        hyper: usize,
    ) -> Self {
        let mut s = pb.scope(name);
        MotionCodec {
            enc: [
                Conv2d::new(&mut s, "enc0", 2, width, 3, 2),
                Conv2d::new(&mut s, "enc1", width, width, 3, 2),
                Conv2d::new(&mut s, "enc2", width, width, 3, 2),
                Conv2d::new(&mut s, "enc3", width, latent, 3, 2),
            ],
            dec: [
                SubpelUp::new(&mut s, "dec0", latent, width),
                SubpelUp::new(&mut s, "dec1", width, width),
                SubpelUp::new(&mut s, "dec2", width, width),
                SubpelUp::new(&mut s, "dec3", width, 2),
            ],
            hyper: HyperPrior::new(&mut s, "hyper", latent, hyper, 2 * latent),
            latent_channels: latent,
        }
    }

    /// Continuous latent at 1/16 resolution.
    pub fn analyze<T: Float>(&self, p: &ParamVars<T>, v: &Var<T>) -> Var<T> {
        let mut h = v.clone();
        for (i, conv) in self.enc.iter().enumerate() {
            h = conv.forward(p, &h);
            if i + 1 < self.enc.len() {
                h = h.leaky_relu(LEAKY_SLOPE);
            }
        }
        h
    }

    /// Reconstructed flow from a dequantised latent.
    pub fn synthesize<T: Float>(&self, p: &ParamVars<T>, m_hat: &Var<T>) -> Var<T> {
        let mut h = m_hat.clone();
        for (i, up) in self.dec.iter().enumerate() {
            h = up.forward(p, &h);
            if i + 1 < self.dec.len() {
                h = h.leaky_relu(LEAKY_SLOPE);
            }
        }
        h
    }
}
