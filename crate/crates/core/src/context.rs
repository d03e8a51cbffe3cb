//! Conditional analysis/synthesis of the current frame given the enhanced
//! contexts, and the context-latent prior.

use ltvc_tensor::nn::{Conv2d, ResBlock, SubpelUp, LEAKY_SLOPE};
use ltvc_tensor::{concat, Float, ParamBuilder, ParamVars, Var};
use rand::Rng;

use crate::error::{Error, Result};
use crate::latent::{split_mean_scale, HyperPrior};
use crate::mining::Pyramid;

#[derive(Clone, Debug)]
pub struct ContextCodec {
    enc: [Conv2d; 4],
    enc_res: [ResBlock; 3],
    pub hyper: HyperPrior,
    temporal_prior: [Conv2d; 2],
    prior_fuse: [Conv2d; 2],
    dec_up: [SubpelUp; 4],
    dec_merge: [Conv2d; 2],
    dec_res: [ResBlock; 3],
    generator: Conv2d,
    generator_res: [ResBlock; 2],
    to_pixels: Conv2d,
    pub levels: [usize; 3],
    pub latent_channels: usize,
    pub feature: usize,
}

impl ContextCodec {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float, R: Rng>(
        pb: &mut ParamBuilder<'_, T, R>,
        name: &str,
        levels: [usize; 3],
        width: usize,
        latent: usize,
        hyper: usize,
        feature: usize,
    ) -> Self {
        let mut s = pb.scope(name);
        let [l1, l2, l3] = levels;
        let n = width;
        ContextCodec {
            enc: [
                Conv2d::new(&mut s, "enc0", 3 + l1, n, 3, 2),
                Conv2d::new(&mut s, "enc1", n + l2, n, 3, 2),
                Conv2d::new(&mut s, "enc2", n + l3, n, 3, 2),
                Conv2d::new(&mut s, "enc3", n, latent, 3, 2),
            ],
            enc_res: [
                ResBlock::new(&mut s, "enc_res0", n),
                ResBlock::new(&mut s, "enc_res1", n),
                ResBlock::new(&mut s, "enc_res2", n),
            ],
            hyper: HyperPrior::new(&mut s, "hyper", latent, hyper, 2 * latent),
            temporal_prior: [
                Conv2d::new(&mut s, "tprior0", l3, n, 3, 2),
                Conv2d::new(&mut s, "tprior1", n, 2 * latent, 3, 2),
            ],
            prior_fuse: [
                Conv2d::new(&mut s, "prior_fuse0", 4 * latent, 2 * latent, 1, 1),
                Conv2d::new(&mut s, "prior_fuse1", 2 * latent, 2 * latent, 1, 1),
            ],
            dec_up: [
                SubpelUp::new(&mut s, "dec_up0", latent, n),
                SubpelUp::new(&mut s, "dec_up1", n, n),
                SubpelUp::new(&mut s, "dec_up2", n, n),
                SubpelUp::new(&mut s, "dec_up3", n, n),
            ],
            dec_merge: [
                Conv2d::new(&mut s, "dec_merge0", n + l3, n, 3, 1),
                Conv2d::new(&mut s, "dec_merge1", n + l2, n, 3, 1),
            ],
            dec_res: [
                ResBlock::new(&mut s, "dec_res0", n),
                ResBlock::new(&mut s, "dec_res1", n),
                ResBlock::new(&mut s, "dec_res2", n),
            ],
            generator: Conv2d::new(&mut s, "generator", n + l1, feature, 3, 1),
            generator_res: [
                ResBlock::new(&mut s, "generator_res0", feature),
                ResBlock::new(&mut s, "generator_res1", feature),
            ],
            to_pixels: Conv2d::new(&mut s, "to_pixels", feature, 3, 3, 1),
            levels,
            latent_channels: latent,
            feature,
        }
    }

    fn check_ctx<T: Float>(&self, ctx: &Pyramid<T>, h: usize, w: usize) -> Result<()> {
        for l in 0..3 {
            let [_, c, ch, cw] = ctx[l].shape();
            if c != self.levels[l] || ch != h >> l || cw != w >> l {
                return Err(Error::dim(format!(
                    "context level {} is {:?}, expected {} channels at {}x{}",
                    l + 1,
                    ctx[l].shape(),
                    self.levels[l],
                    w >> l,
                    h >> l
                )));
            }
        }
        Ok(())
    }

    /// Latent `y` at 1/16 resolution; contexts enter at strides 1, 2 and 4.
    pub fn analyze<T: Float>(&self, p: &ParamVars<T>, x: &Var<T>, ctx: &Pyramid<T>) -> Result<Var<T>> {
        let [_, c, h, w] = x.shape();
        if c != 3 || h % 16 != 0 || w % 16 != 0 {
            return Err(Error::dim(format!("frame {:?} is not a padded RGB frame", x.shape())));
        }
        self.check_ctx(ctx, h, w)?;
        let a = self.enc[0].forward(p, &concat(&[x, &ctx[0]])).leaky_relu(LEAKY_SLOPE);
        let a = self.enc_res[0].forward(p, &a);
        let b = self.enc[1].forward(p, &concat(&[&a, &ctx[1]])).leaky_relu(LEAKY_SLOPE);
        let b = self.enc_res[1].forward(p, &b);
        let d = self.enc[2].forward(p, &concat(&[&b, &ctx[2]])).leaky_relu(LEAKY_SLOPE);
        let d = self.enc_res[2].forward(p, &d);
        Ok(self.enc[3].forward(p, &d))
    }

    /// `(mu, sigma)` of `y` from the decoded hyper-latent and `C^3`.
    pub fn prior<T: Float>(&self, p: &ParamVars<T>, z_hat: &Var<T>, ctx: &Pyramid<T>) -> (Var<T>, Var<T>) {
        let [_, _, h3, w3] = ctx[2].shape();
        let (h, w) = (h3 / 4, w3 / 4);
        let hyper = self.hyper.synthesize(p, z_hat, h, w);
        let t = self.temporal_prior[0].forward(p, &ctx[2]).leaky_relu(LEAKY_SLOPE);
        let t = self.temporal_prior[1].forward(p, &t);
        let f = self.prior_fuse[0].forward(p, &concat(&[&hyper, &t])).leaky_relu(LEAKY_SLOPE);
        split_mean_scale(&self.prior_fuse[1].forward(p, &f))
    }

    /// `(x_hat in [0, 1], F_t)` from the dequantised latent and contexts.
    pub fn synthesize<T: Float>(&self, p: &ParamVars<T>, y_hat: &Var<T>, ctx: &Pyramid<T>) -> Result<(Var<T>, Var<T>)> {
        let [_, c, h, w] = y_hat.shape();
        if c != self.latent_channels {
            return Err(Error::corrupt(
                None,
                format!("context latent has {c} channels, model expects {}", self.latent_channels),
            ));
        }
        self.check_ctx(ctx, h * 16, w * 16)?;
        let u = self.dec_up[0].forward(p, y_hat).leaky_relu(LEAKY_SLOPE);
        let u = self.dec_res[0].forward(p, &u);
        let u = self.dec_up[1].forward(p, &u).leaky_relu(LEAKY_SLOPE);
        let u = self.dec_merge[0].forward(p, &concat(&[&u, &ctx[2]])).leaky_relu(LEAKY_SLOPE);
        let u = self.dec_res[1].forward(p, &u);
        let u = self.dec_up[2].forward(p, &u).leaky_relu(LEAKY_SLOPE);
        let u = self.dec_merge[1].forward(p, &concat(&[&u, &ctx[1]])).leaky_relu(LEAKY_SLOPE);
        let u = self.dec_res[2].forward(p, &u);
        let u = self.dec_up[3].forward(p, &u).leaky_relu(LEAKY_SLOPE);
        let f = self.generator.forward(p, &concat(&[&u, &ctx[0]]));
        let f = self.generator_res[1].forward(p, &self.generator_res[0].forward(p, &f));
        let x_hat = self.to_pixels.forward(p, &f.leaky_relu(LEAKY_SLOPE)).clamp(0.0, 1.0);
        Ok((x_hat, f))
    }
}
