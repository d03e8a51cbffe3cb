//! Differentiable code-length models: the discretised Gaussian conditional
//! and the per-channel factorized prior used for hyper-latents.

use std::f64::consts::LN_2;

use ltvc_tensor::{Float, ParamBuilder, ParamId, ParamStore, ParamVars, Tensor, Var};
use rand::Rng;

use super::cdf::{self, CdfTable, SUPPORT, SYMBOL_MIN};
use crate::error::{Error, Result};

/// Probabilities are floored here before taking logarithms.
pub const PROB_FLOOR: f64 = 1.0 / 65536.0;
/// Lower bound applied to every predicted scale.
pub const SIGMA_FLOOR: f64 = 0.04;

fn npdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// `-log2 max(P(v - 0.5 < X < v + 0.5), floor)` for `X ~ N(0, sigma^2)`.
pub fn gaussian_bits_scalar(v: f64, sigma: f64) -> f64 {
    -(cdf::gaussian_bin(v, 0.0, sigma).max(PROB_FLOOR)).log2()
}

/// Per-element code length of `v` (already mean-removed) under a zero-mean
/// Gaussian of scale `sigma`, in bits.
///
/// Below the probability floor the gradient still pushes the bin mass up.
pub fn gaussian_bits<T: Float>(v: &Var<T>, sigma: &Var<T>) -> Var<T> {
    assert_eq!(v.shape(), sigma.shape(), "rate inputs must align");
    let n = v.value().len();
    let mut bits = Vec::with_capacity(n);
    let mut dv = Vec::with_capacity(n);
    let mut ds = Vec::with_capacity(n);
    for (&vi, &si) in v.value().data().iter().zip(sigma.value().data()) {
        let (x, s) = (vi.as_f64(), si.as_f64());
        let d = x.abs();
        let (a, b) = ((0.5 - d) / s, (-0.5 - d) / s);
        let p = cdf::phi(a) - cdf::phi(b);
        let pf = p.max(PROB_FLOOR);
        bits.push(T::cast_from(-pf.log2()));
        let dbits_dp = -1.0 / (LN_2 * pf);
        let dp_dd = (npdf(b) - npdf(a)) / s;
        let dp_ds = (b * npdf(b) - a * npdf(a)) / s;
        dv.push(T::cast_from(dbits_dp * dp_dd * x.signum() * (x != 0.0) as u8 as f64));
        ds.push(T::cast_from(dbits_dp * dp_ds));
    }
    let shape = v.shape();
    let dv = Tensor::from_vec(shape, dv);
    let ds = Tensor::from_vec(shape, ds);
    Var::from_op(Tensor::from_vec(shape, bits), &[v, sigma], move |g| {
        vec![
            Some(g.zip_map(&dv, |a, b| a * b)),
            Some(g.zip_map(&ds, |a, b| a * b)),
        ]
    })
}

/// Bits of integer symbols under per-symbol `N(mu, sigma^2)` bin masses.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RateEstimate {
    pub motion_hyper: f64,
    pub motion: f64,
    pub context_hyper: f64,
    pub context: f64,
}

impl RateEstimate {
    pub fn total(&self) -> f64 {
        self.motion_hyper + self.motion + self.context_hyper + self.context
    }

    pub fn motion_bits(&self) -> f64 {
        self.motion_hyper + self.motion
    }

    pub fn context_bits(&self) -> f64 {
        self.context_hyper + self.context
    }
}

/// `sum -log2 max(Phi((s + 0.5 - mu) / sigma) - Phi((s - 0.5 - mu) / sigma), 2^-16)`.
pub fn estimate_rate(symbols: &[f64], mu: &[f64], sigma: &[f64]) -> Result<f64> {
    if symbols.len() != mu.len() || mu.len() != sigma.len() {
        return Err(Error::dim("symbols, means and scales differ in length"));
    }
    let mut bits = 0.0;
    for ((&s, &m), &sg) in symbols.iter().zip(mu).zip(sigma) {
        if !m.is_finite() || !sg.is_finite() || sg <= 0.0 {
            return Err(Error::Numeric(format!("invalid prior (mu {m}, sigma {sg})")));
        }
        bits += gaussian_bits_scalar(s - m, sg);
    }
    Ok(bits)
}

/// Hidden widths of the cumulative-density network.
const FILTERS: [usize; 5] = [1, 3, 3, 3, 1];
const LAYERS: usize = FILTERS.len() - 1;

/// Non-parametric per-channel density: a monotone network models each
/// channel's CDF, bin masses are differences of that CDF.
#[derive(Clone, Debug)]
pub struct FactorizedPrior {
    pub channels: usize,
    matrices: [ParamId; LAYERS],
    biases: [ParamId; LAYERS],
    factors: [ParamId; LAYERS - 1],
}

struct ChannelNet {
    soft: Vec<Vec<f64>>,
    sig: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    tf: Vec<Vec<f64>>,
}

struct Trace {
    h: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
}

impl ChannelNet {
    fn load<T: Float>(prior: &FactorizedPrior, get: &dyn Fn(ParamId) -> Tensor<T>, c: usize) -> Self {
        let pick = |id: ParamId| {
            let t = get(id);
            let per = t.len() / prior.channels;
            t.data()[c * per..(c + 1) * per].iter().map(|v| v.as_f64()).collect::<Vec<f64>>()
        };
        let mats: Vec<Vec<f64>> = prior.matrices.iter().map(|&id| pick(id)).collect();
        let soft = mats.iter().map(|m| m.iter().map(|&v| softplus(v)).collect()).collect();
        let sig = mats.iter().map(|m| m.iter().map(|&v| sigmoid(v)).collect()).collect();
        let biases = prior.biases.iter().map(|&id| pick(id)).collect();
        let tf = prior
            .factors
            .iter()
            .map(|&id| pick(id).iter().map(|v| v.tanh()).collect())
            .collect();
        ChannelNet {
            soft,
            sig,
            biases,
            tf,
        }
    }

    fn forward(&self, x: f64) -> (f64, Trace) {
        let mut h = vec![vec![x]];
        let mut a = Vec::with_capacity(LAYERS);
        for i in 0..LAYERS {
            let (din, dout) = (FILTERS[i], FILTERS[i + 1]);
            let hi = &h[i];
            let ai: Vec<f64> = (0..dout)
                .map(|o| {
                    let mut acc = self.biases[i][o];
                    for j in 0..din {
                        acc += self.soft[i][o * din + j] * hi[j];
                    }
                    acc
                })
                .collect();
            if i + 1 < LAYERS {
                let next = ai.iter().zip(&self.tf[i]).map(|(&v, &f)| v + f * v.tanh()).collect();
                h.push(next);
            }
            a.push(ai);
        }
        let out = a[LAYERS - 1][0];
        (out, Trace { h, a })
    }

    /// Accumulates `g * d(out)/d(params)` into `grads` and returns `d(out)/dx * g`.
    fn backward(&self, tr: &Trace, g: f64, grads: &mut ChannelGrads) -> f64 {
        let mut ga = vec![g];
        let mut gx = 0.0;
        for i in (0..LAYERS).rev() {
            let (din, dout) = (FILTERS[i], FILTERS[i + 1]);
            let mut gh = vec![0.0; din];
            for o in 0..dout {
                grads.biases[i][o] += ga[o];
                for j in 0..din {
                    let k = o * din + j;
                    grads.mats[i][k] += ga[o] * self.sig[i][k] * tr.h[i][j];
                    gh[j] += ga[o] * self.soft[i][k];
                }
            }
            if i == 0 {
                gx = gh[0];
            } else {
                let prev = &tr.a[i - 1];
                ga = (0..din)
                    .map(|o| {
                        let t = prev[o].tanh();
                        let f = self.tf[i - 1][o];
                        grads.factors[i - 1][o] += gh[o] * (1.0 - f * f) * t;
                        gh[o] * (1.0 + f * (1.0 - t * t))
                    })
                    .collect();
            }
        }
        gx
    }
}

struct ChannelGrads {
    mats: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    factors: Vec<Vec<f64>>,
}

impl ChannelGrads {
    fn zeros() -> Self {
        ChannelGrads {
            mats: (0..LAYERS).map(|i| vec![0.0; FILTERS[i] * FILTERS[i + 1]]).collect(),
            biases: (0..LAYERS).map(|i| vec![0.0; FILTERS[i + 1]]).collect(),
            factors: (0..LAYERS - 1).map(|i| vec![0.0; FILTERS[i + 1]]).collect(),
        }
    }
}

fn softplus(v: f64) -> f64 {
    if v > 30.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Bin mass of `x` from the channel CDF network, plus its trace.
fn likelihood(net: &ChannelNet, x: f64) -> (f64, f64, Trace, Trace) {
    let (lo, tl) = net.forward(x - 0.5);
    let (up, tu) = net.forward(x + 0.5);
    let sign = -(lo + up).signum();
    let sign = if sign == 0.0 { -1.0 } else { sign };
    let q = sigmoid(sign * up) - sigmoid(sign * lo);
    (q, sign, tl, tu)
}

impl FactorizedPrior {
    pub fn new<T: Float, R: Rng>(pb: &mut ParamBuilder<'_, T, R>, name: &str, channels: usize) -> Self {
        let mut s = pb.scope(name);
        let scale = 10f64.powf(1.0 / LAYERS as f64);
        let mut mats = Vec::new();
        let mut biases = Vec::new();
        let mut factors = Vec::new();
        for i in 0..LAYERS {
            let (din, dout) = (FILTERS[i], FILTERS[i + 1]);
            let init = (1.0 / scale / dout as f64).exp_m1().ln();
            mats.push(s.constant(&format!("matrix{i}"), [channels, dout, din, 1], init));
            biases.push(s.uniform(&format!("bias{i}"), [channels, dout, 1, 1], 0.5));
            if i + 1 < LAYERS {
                factors.push(s.constant(&format!("factor{i}"), [channels, dout, 1, 1], 0.0));
            }
        }
        FactorizedPrior {
            channels,
            matrices: mats.try_into().expect("layer count"),
            biases: biases.try_into().expect("layer count"),
            factors: factors.try_into().expect("layer count"),
        }
    }

    fn param_ids(&self) -> Vec<ParamId> {
        self.matrices
            .iter()
            .chain(&self.biases)
            .chain(&self.factors)
            .copied()
            .collect()
    }

    /// Per-element code length of `z` (`[N, C, h, w]`, possibly noisy), in bits.
    pub fn bits<T: Float>(&self, p: &ParamVars<T>, z: &Var<T>) -> Var<T> {
        let [_, c, _, _] = z.shape();
        assert_eq!(c, self.channels, "factorized prior expects {} channels", self.channels);
        let ids = self.param_ids();
        let values: Vec<std::rc::Rc<Tensor<T>>> = ids.iter().map(|&id| p[id].shared()).collect();
        let nets = self.channel_nets(&ids, &values);
        let zv = z.shared();
        let bits = self.map_elements(&zv, |k, ch| {
            let (q, ..) = likelihood(&nets[ch], zv.data()[k].as_f64());
            T::cast_from(-(q.abs().max(PROB_FLOOR)).log2())
        });
        let me = self.clone();
        let mut inputs: Vec<&Var<T>> = vec![z];
        inputs.extend(ids.iter().map(|&id| &p[id]));
        Var::from_op(bits, &inputs, move |g| {
            let nets = me.channel_nets(&me.param_ids(), &values);
            let mut grads: Vec<ChannelGrads> = (0..me.channels).map(|_| ChannelGrads::zeros()).collect();
            let dz = me.map_elements(&zv, |k, ch| {
                let net = &nets[ch];
                let (q, sign, tl, tu) = likelihood(net, zv.data()[k].as_f64());
                let pf = q.abs().max(PROB_FLOOR);
                let g_q = g.data()[k].as_f64() * -1.0 / (LN_2 * pf) * q.signum();
                let su = sigmoid(sign * tu.a[LAYERS - 1][0]);
                let sl = sigmoid(sign * tl.a[LAYERS - 1][0]);
                let cg = &mut grads[ch];
                let gx = net.backward(&tu, g_q * sign * su * (1.0 - su), cg)
                    + net.backward(&tl, -g_q * sign * sl * (1.0 - sl), cg);
                T::cast_from(gx)
            });
            let mut out = vec![Some(dz)];
            for (slot, v) in values.iter().enumerate() {
                let data = grads
                    .iter()
                    .flat_map(|cg| {
                        let src = if slot < LAYERS {
                            &cg.mats[slot]
                        } else if slot < 2 * LAYERS {
                            &cg.biases[slot - LAYERS]
                        } else {
                            &cg.factors[slot - 2 * LAYERS]
                        };
                        src.iter().map(|&x| T::cast_from(x))
                    })
                    .collect();
                out.push(Some(Tensor::from_vec(v.shape(), data)));
            }
            out
        })
    }

    fn channel_nets<T: Float>(&self, ids: &[ParamId], values: &[std::rc::Rc<Tensor<T>>]) -> Vec<ChannelNet> {
        let get = |id: ParamId| {
            let slot = ids.iter().position(|&i| i == id).expect("prior parameter");
            values[slot].as_ref().clone()
        };
        (0..self.channels).map(|ch| ChannelNet::load(self, &get, ch)).collect()
    }

    /// Applies `f(flat_index, channel)` over every element of `z`.
    fn map_elements<T: Float>(&self, z: &Tensor<T>, mut f: impl FnMut(usize, usize) -> T) -> Tensor<T> {
        let [n, c, h, w] = z.shape();
        let plane = h * w;
        let mut out = vec![T::zero(); z.len()];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                for (k, o) in out[off..off + plane].iter_mut().enumerate() {
                    *o = f(off + k, ch);
                }
            }
        }
        Tensor::from_vec(z.shape(), out)
    }

    /// Unfloored bin masses of every symbol in `[-128, 127]`, per channel.
    pub fn pmfs<T: Float>(&self, store: &ParamStore<T>) -> Vec<Vec<f64>> {
        let ids = self.param_ids();
        let values: Vec<std::rc::Rc<Tensor<T>>> =
            ids.iter().map(|&id| std::rc::Rc::new(store.get(id).clone())).collect();
        self.channel_nets(&ids, &values)
            .iter()
            .map(|net| {
                (0..SUPPORT)
                    .map(|k| likelihood(net, (SYMBOL_MIN + k as i32) as f64).0.abs())
                    .collect()
            })
            .collect()
    }

    /// Quantised per-channel tables over `[-128, 127]`.
    pub fn tables<T: Float>(&self, store: &ParamStore<T>) -> Vec<CdfTable> {
        self.pmfs(store).iter().map(|p| cdf::table_from_pmf(p)).collect()
    }
}
