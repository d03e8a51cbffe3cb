//! Latent quantisation and the hyperprior shared by the motion and context
//! coders.

use ltvc_tensor::nn::{Conv2d, SubpelUp, LEAKY_SLOPE};
use ltvc_tensor::{Float, ParamBuilder, ParamVars, Tensor, Var};
use rand::Rng;

use crate::entropy::{FactorizedPrior, SIGMA_FLOOR, SYMBOL_MAX, SYMBOL_MIN};
use crate::error::{Error, Result};

/// Which stream a latent belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LatentKind {
    MotionHyper,
    Motion,
    ContextHyper,
    Context,
}

/// Integer symbols of one quantised latent, `[channels, height, width]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatentCode {
    pub kind: LatentKind,
    pub shape: [usize; 3],
    pub symbols: Vec<i32>,
}

impl LatentCode {
    pub fn new(kind: LatentKind, shape: [usize; 3], symbols: Vec<i32>) -> Result<Self> {
        if symbols.len() != shape.iter().product::<usize>() {
            return Err(Error::corrupt(None, format!("{kind:?} latent: symbol count does not match shape")));
        }
        if symbols.iter().any(|s| !(SYMBOL_MIN..=SYMBOL_MAX).contains(s)) {
            return Err(Error::corrupt(None, format!("{kind:?} latent: symbol outside [-128, 127]")));
        }
        Ok(LatentCode { kind, shape, symbols })
    }

    /// Symbols as a `[1, C, H, W]` tensor.
    pub fn to_tensor<T: Float>(&self) -> Tensor<T> {
        let [c, h, w] = self.shape;
        Tensor::from_vec([1, c, h, w], self.symbols.iter().map(|&s| T::cast_from(s as f64)).collect())
    }

    /// Fails unless the channel count is `channels`.
    pub fn expect_channels(&self, channels: usize) -> Result<()> {
        if self.shape[0] != channels {
            return Err(Error::corrupt(
                None,
                format!(
                    "{:?} latent has {} channels, model expects {channels}",
                    self.kind, self.shape[0]
                ),
            ));
        }
        Ok(())
    }
}

/// Clamps rounded values into the coder support.
pub fn to_symbols<T: Float>(v: &Tensor<T>) -> Vec<i32> {
    v.data()
        .iter()
        .map(|x| {
            let r = x.as_f64().round();
            r.clamp(SYMBOL_MIN as f64, SYMBOL_MAX as f64) as i32
        })
        .collect()
}

/// How latents are discretised in a differentiable forward pass.
pub enum Quantizer<'a, R> {
    /// Additive uniform noise for the rate, straight-through rounding for
    /// the reconstruction.
    Noise(&'a mut R),
    /// Hard rounding for both (deterministic evaluation).
    Round,
}

impl<R: Rng> Quantizer<'_, R> {
    fn noise<T: Float>(&mut self, shape: [usize; 4]) -> Option<Tensor<T>> {
        match self {
            Quantizer::Noise(rng) => {
                let n: usize = shape.iter().product();
                Some(Tensor::from_vec(
                    shape,
                    (0..n).map(|_| T::cast_from(rng.gen_range(-0.5..0.5))).collect(),
                ))
            }
            Quantizer::Round => None,
        }
    }

    /// Returns `(reconstruction, rate input)` for a latent coded around `mu`.
    /// The rate input is mean-removed.
    pub fn centered<T: Float>(&mut self, y: &Var<T>, mu: &Var<T>) -> (Var<T>, Var<T>) {
        let r = y.sub(mu);
        let q = r.round_ste();
        let rate_in = match self.noise(r.shape()) {
            Some(u) => r.add(&Var::constant(u)),
            None => q.clone(),
        };
        (q.add(mu), rate_in)
    }

    /// `(reconstruction, rate input)` for a latent coded without a mean.
    pub fn plain<T: Float>(&mut self, z: &Var<T>) -> (Var<T>, Var<T>) {
        let q = z.round_ste();
        let rate_in = match self.noise(z.shape()) {
            Some(u) => z.add(&Var::constant(u)),
            None => q.clone(),
        };
        (q, rate_in)
    }
}

/// Hyper-analysis / hyper-synthesis pair plus the factorized prior of the
/// hyper-latent.
#[derive(Clone, Debug)]
pub struct HyperPrior {
    enc: [Conv2d; 3],
    dec_up: [SubpelUp; 2],
    dec_out: Conv2d,
    pub prior: FactorizedPrior,
    pub latent_channels: usize,
}

impl HyperPrior {
    /// `latent_channels` is the coded latent's width; the synthesis emits
    /// `2 * out_channels` prior features.
    pub fn new<T: Float, R: Rng>(
        pb: &mut ParamBuilder<'_, T, R>,
        name: &str,
        latent_channels: usize,
        hyper_channels: usize,
        out_channels: usize,
    ) -> Self {
        let mut s = pb.scope(name);
        let w = hyper_channels;
        HyperPrior {
            enc: [
                Conv2d::new(&mut s, "enc0", latent_channels, w, 3, 1),
                Conv2d::new(&mut s, "enc1", w, w, 3, 2),
                Conv2d::new(&mut s, "enc2", w, hyper_channels, 3, 2),
            ],
            dec_up: [
                SubpelUp::new(&mut s, "dec0", hyper_channels, w),
                SubpelUp::new(&mut s, "dec1", w, w),
            ],
            dec_out: Conv2d::new(&mut s, "dec2", w, out_channels, 3, 1),
            prior: FactorizedPrior::new(&mut s, "prior", hyper_channels),
            latent_channels,
        }
    }

    pub fn analyze<T: Float>(&self, p: &ParamVars<T>, y: &Var<T>) -> Var<T> {
        let h = self.enc[0].forward(p, y).leaky_relu(LEAKY_SLOPE);
        let h = self.enc[1].forward(p, &h).leaky_relu(LEAKY_SLOPE);
        self.enc[2].forward(p, &h)
    }

    /// Prior features at the latent resolution `(h, w)`.
    pub fn synthesize<T: Float>(&self, p: &ParamVars<T>, z_hat: &Var<T>, h: usize, w: usize) -> Var<T> {
        let u = self.dec_up[0].forward(p, z_hat).leaky_relu(LEAKY_SLOPE);
        let u = self.dec_up[1].forward(p, &u).leaky_relu(LEAKY_SLOPE);
        let u = self.dec_out.forward(p, &u);
        let [_, _, uh, uw] = u.shape();
        debug_assert!(uh >= h && uw >= w, "hyper synthesis smaller than latent");
        if (uh, uw) == (h, w) {
            u
        } else {
            u.crop(h, w)
        }
    }
}

/// Splits `[mu | raw scale]` features into a mean and a floored scale.
pub fn split_mean_scale<T: Float>(params: &Var<T>) -> (Var<T>, Var<T>) {
    let c = params.shape()[1] / 2;
    let mu = params.slice_channels(0, c);
    let sigma = params.slice_channels(c, c).lower_bound(SIGMA_FLOOR);
    (mu, sigma)
}
