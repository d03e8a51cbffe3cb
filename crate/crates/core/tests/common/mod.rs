//! Independent oracles shared by the integration tests and the acceptance
//! run. Each check returns the measured quantity; callers decide pass/fail.
#![allow(dead_code)]

use ltvc_core::bdrate::{bd_rate, CurvePoint};
use ltvc_core::chain::{conv_lstm_step, init_state, ConvLstm, ReferenceChain};
use ltvc_core::checkpoint::DistortionMode;
use ltvc_core::entropy::cdf::table_from_pmf;
use ltvc_core::entropy::rans;
use ltvc_core::entropy::{CdfTable, SYMBOL_MAX, SYMBOL_MIN};
use ltvc_core::fusion::ContextFusion;
use ltvc_core::mining::{warp_bilinear, ContextMining};
use ltvc_core::train::{clip_loss, rd_loss};
use ltvc_core::Variant;
use ltvc_tensor::gradcheck::{check, random_probes};
use ltvc_tensor::{ParamBuilder, ParamStore, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor<R: Rng>(rng: &mut R, shape: [usize; 4], lo: f64, hi: f64) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect())
}

// ---------------------------------------------------------------- warp

fn tent(d: f64) -> f64 {
    (1.0 - d.abs()).max(0.0)
}

/// Backward warp as an explicit sum of tent-weighted source pixels at the
/// border-clamped sampling position.
pub fn warp_oracle(src: &Tensor<f64>, flow: &Tensor<f64>) -> Tensor<f64> {
    let [n, c, h, w] = src.shape();
    let mut out = Tensor::zeros([n, c, h, w]);
    for s in 0..n {
        for y in 0..h {
            for x in 0..w {
                let sx = (x as f64 + flow.at(s, 0, y, x)).clamp(0.0, (w - 1) as f64);
                let sy = (y as f64 + flow.at(s, 1, y, x)).clamp(0.0, (h - 1) as f64);
                for ch in 0..c {
                    let mut acc = 0.0;
                    for qy in 0..h {
                        for qx in 0..w {
                            acc += src.at(s, ch, qy, qx) * tent(sx - qx as f64) * tent(sy - qy as f64);
                        }
                    }
                    out.set(s, ch, y, x, acc);
                }
            }
        }
    }
    out
}

pub struct WarpReport {
    pub max_abs_error: f64,
    pub zero_flow_exact: bool,
}

/// `instances` random 8x8 cases in production precision; flows reach past
/// the border so clamping is exercised.
pub fn warp_check(instances: usize, seed: u64) -> WarpReport {
    let mut r = rng(seed);
    let mut max_abs_error = 0.0f64;
    let mut zero_flow_exact = true;
    for k in 0..instances {
        let c = 1 + k % 3;
        let src = random_tensor(&mut r, [1, c, 8, 8], 0.0, 1.0).cast::<f32>();
        let flow = random_tensor(&mut r, [1, 2, 8, 8], -3.0, 3.0).cast::<f32>();
        let got = warp_bilinear(&Var::constant(src.clone()), &Var::constant(flow.clone())).unwrap();
        let want = warp_oracle(&src.cast(), &flow.cast());
        for (a, b) in got.value().data().iter().zip(want.data()) {
            max_abs_error = max_abs_error.max((*a as f64 - b).abs());
        }
        let zero = warp_bilinear(&Var::constant(src.clone()), &Var::constant(Tensor::zeros([1, 2, 8, 8]))).unwrap();
        zero_flow_exact &= zero.value().data() == src.data();
    }
    WarpReport {
        max_abs_error,
        zero_flow_exact,
    }
}

// ---------------------------------------------------------------- LSTM

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Gate equations on one pixel; `w` is `[4C][2C]` (centre taps), inputs are
/// ordered `[h_prev, x]`, gate blocks `i, f, o, candidate`.
pub fn lstm_scalar_oracle(w: &[Vec<f64>], b: &[f64], x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let ch = x.len();
    let u: Vec<f64> = h_prev.iter().chain(x).copied().collect();
    let z: Vec<f64> = (0..4 * ch)
        .map(|k| w[k].iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() + b[k])
        .collect();
    let mut h = vec![0.0; ch];
    let mut c = vec![0.0; ch];
    for j in 0..ch {
        let i = sigmoid(z[j]);
        let f = sigmoid(z[ch + j]);
        let o = sigmoid(z[2 * ch + j]);
        let g = z[3 * ch + j].tanh();
        c[j] = f * c_prev[j] + i * g;
        h[j] = o * c[j].tanh();
    }
    (h, c)
}

fn lstm_cell(ch: usize, seed: u64) -> (ParamStore<f64>, ConvLstm) {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let cell = ConvLstm::new(&mut ParamBuilder::new(&mut store, &mut r), "lstm", ch);
    (store, cell)
}

pub struct LstmReport {
    pub max_abs_error: f64,
    pub forced_gate_exact: bool,
}

/// 1x1 instances: only the centre tap of each 3x3 kernel sees data.
pub fn lstm_check(parameterizations: usize, seed: u64) -> LstmReport {
    let mut r = rng(seed);
    let mut max_abs_error = 0.0f64;
    for k in 0..parameterizations {
        let ch = 1 + k % 3;
        let (mut store, cell) = lstm_cell(ch, seed + k as u64);
        for v in store.get_mut(cell.gates.bias).data_mut() {
            *v = r.gen_range(-1.0..1.0);
        }
        let wt = store.get(cell.gates.weight).clone();
        let w: Vec<Vec<f64>> = (0..4 * ch).map(|o| (0..2 * ch).map(|i| wt.at(o, i, 1, 1)).collect()).collect();
        let b = store.get(cell.gates.bias).data().to_vec();
        let x = random_tensor(&mut r, [1, ch, 1, 1], -1.0, 1.0);
        let hp = random_tensor(&mut r, [1, ch, 1, 1], -1.0, 1.0);
        let cp = random_tensor(&mut r, [1, ch, 1, 1], -2.0, 2.0);
        let p = store.constants();
        let (h, c) = conv_lstm_step(
            &p,
            &cell,
            &Var::constant(x.clone()),
            &Var::constant(hp.clone()),
            &Var::constant(cp.clone()),
        )
        .unwrap();
        let (ho, co) = lstm_scalar_oracle(&w, &b, x.data(), hp.data(), cp.data());
        for (a, e) in h.value().data().iter().zip(&ho).chain(c.value().data().iter().zip(&co)) {
            max_abs_error = max_abs_error.max((a - e).abs());
        }
    }
    // zero weights and biases: every gate is exactly 1/2, candidate tanh(b_c)
    let ch = 2;
    let (mut store, cell) = lstm_cell(ch, seed);
    store.get_mut(cell.gates.weight).data_mut().fill(0.0);
    let bias = store.get_mut(cell.gates.bias).data_mut();
    bias.fill(0.0);
    bias[3 * ch] = 0.7;
    bias[3 * ch + 1] = -0.3;
    let x = random_tensor(&mut r, [1, ch, 4, 4], -1.0, 1.0);
    let hp = random_tensor(&mut r, [1, ch, 4, 4], -1.0, 1.0);
    let cp = random_tensor(&mut r, [1, ch, 4, 4], -2.0, 2.0);
    let (h, c) = conv_lstm_step(
        &store.constants(),
        &cell,
        &Var::constant(x),
        &Var::constant(hp),
        &Var::constant(cp.clone()),
    )
    .unwrap();
    let mut forced_gate_exact = true;
    for j in 0..ch {
        let g = [0.7f64, -0.3][j].tanh();
        for (i, &cv) in cp.channel(0, j).iter().enumerate() {
            let c_want = 0.5 * cv + 0.5 * g;
            forced_gate_exact &= c.value().channel(0, j)[i] == c_want;
            forced_gate_exact &= h.value().channel(0, j)[i] == 0.5 * c_want.tanh();
        }
    }
    LstmReport {
        max_abs_error,
        forced_gate_exact,
    }
}

/// `||HT_a - HT_b||` after histories that differ only two steps back.
pub fn memory_gap(seed: u64) -> f64 {
    let (hidden, feature, side) = (4, 5, 8);
    let mut r = rng(seed);
    let mut store = ParamStore::<f64>::new();
    let chain = ReferenceChain::new(&mut ParamBuilder::new(&mut store, &mut r), "chain", hidden, feature);
    let p = store.constants();
    let frame = |r: &mut ChaCha8Rng| {
        (
            Var::constant(random_tensor(r, [1, 3, side, side], 0.0, 1.0)),
            Var::constant(random_tensor(r, [1, feature, side, side], -1.0, 1.0)),
        )
    };
    let (xa, fa) = frame(&mut r);
    let (xb, fb) = frame(&mut r);
    let (xc, fc) = frame(&mut r);
    let run = |x0: &Var<f64>, f0: &Var<f64>| {
        let s = init_state::<f64>(hidden, side, side);
        let s = chain.advance(&p, x0, f0, &s, Variant::Mc).unwrap();
        chain.advance(&p, &xc, &fc, &s, Variant::Mc).unwrap()
    };
    let a = run(&xa, &fa);
    let b = run(&xb, &fb);
    a.ht
        .value()
        .data()
        .iter()
        .zip(b.ht.value().data())
        .map(|(u, v)| (u - v).powi(2))
        .sum::<f64>()
        .sqrt()
}

// ---------------------------------------------------------------- gradients

pub struct GradCheck {
    pub name: &'static str,
    pub max_rel_error: f64,
    /// Probes with a gradient above `1e-9`; zero would make the check vacuous.
    pub live_probes: usize,
    pub probes: usize,
}

fn summarize(name: &'static str, rep: &ltvc_tensor::gradcheck::GradCheckReport) -> GradCheck {
    GradCheck {
        name,
        max_rel_error: rep.max_rel_error(),
        live_probes: rep.results.iter().filter(|r| r.analytic.abs().max(r.numeric.abs()) > 1e-9).count(),
        probes: rep.results.len(),
    }
}

/// Largest relative error between tape and central-difference gradients of
/// each checked operation, at double precision on 8x8 inputs.
pub fn gradient_checks(seed: u64) -> Vec<GradCheck> {
    let h = 1e-6;
    let mut out = Vec::new();
    let mut r = rng(seed);

    // weighted sums keep the probed scalar sensitive to every output
    let weigh = |v: &Var<f64>, w: &Tensor<f64>| v.mul(&Var::constant(w.clone())).mean();

    {
        let ch = 3;
        let (store, cell) = lstm_cell(ch, seed);
        let inputs = vec![
            random_tensor(&mut r, [1, ch, 8, 8], -1.0, 1.0),
            random_tensor(&mut r, [1, ch, 8, 8], -1.0, 1.0),
            random_tensor(&mut r, [1, ch, 8, 8], -1.0, 1.0),
        ];
        let wh = random_tensor(&mut r, [1, ch, 8, 8], -1.0, 1.0);
        let wc = random_tensor(&mut r, [1, ch, 8, 8], -1.0, 1.0);
        let probes = random_probes(&store, &inputs, 6, |_| true, &mut r);
        let rep = check(
            &store,
            &inputs,
            |p, v| {
                let (hh, cc) = conv_lstm_step(p, &cell, &v[0], &v[1], &v[2]).unwrap();
                weigh(&hh, &wh).add(&weigh(&cc, &wc))
            },
            &probes,
            h,
        );
        out.push(summarize("conv_lstm_step", &rep));
    }

    let levels = [4, 5, 6];
    let (feature, hidden) = (3, 4);
    let sizes = [8, 4, 2];
    {
        let mut store = ParamStore::<f64>::new();
        let mut pr = rng(seed + 1);
        let mining = ContextMining::new(&mut ParamBuilder::new(&mut store, &mut pr), "mining", feature, hidden, levels);
        let mut inputs: Vec<Tensor<f64>> = (0..3)
            .map(|l| random_tensor(&mut r, [1, levels[l], sizes[l], sizes[l]], -1.0, 1.0))
            .collect();
        inputs.extend((0..3).map(|l| random_tensor(&mut r, [1, 2, sizes[l], sizes[l]], -1.3, 1.3)));
        inputs.push(random_tensor(&mut r, [1, hidden, 8, 8], -1.0, 1.0));
        let ws: Vec<Tensor<f64>> = (0..3)
            .map(|l| random_tensor(&mut r, [1, levels[l], sizes[l], sizes[l]], -1.0, 1.0))
            .collect();
        let probes = random_probes(&store, &inputs, 4, |n| n.contains("temporal") || n.contains("hdown"), &mut r);
        let rep = check(
            &store,
            &inputs,
            |p, v| {
                let fpyr = [v[0].clone(), v[1].clone(), v[2].clone()];
                let flows = [v[3].clone(), v[4].clone(), v[5].clone()];
                let ct = mining.mine_temporal_context(p, &fpyr, &flows, Some(&v[6])).unwrap();
                let parts: Vec<Var<f64>> = (0..3).map(|l| weigh(&ct[l], &ws[l])).collect();
                ltvc_tensor::sum_all(&parts.iter().collect::<Vec<_>>())
            },
            &probes,
            h,
        );
        out.push(summarize("mine_temporal_context", &rep));
    }

    {
        let mut store = ParamStore::<f64>::new();
        let mut pr = rng(seed + 2);
        let fusion = ContextFusion::new(&mut ParamBuilder::new(&mut store, &mut pr), "fusion", levels);
        let inputs: Vec<Tensor<f64>> = (0..6)
            .map(|k| random_tensor(&mut r, [1, levels[k % 3], sizes[k % 3], sizes[k % 3]], -1.0, 1.0))
            .collect();
        let ws: Vec<Tensor<f64>> = (0..3)
            .map(|l| random_tensor(&mut r, [1, levels[l], sizes[l], sizes[l]], -1.0, 1.0))
            .collect();
        let probes = random_probes(&store, &inputs, 4, |_| true, &mut r);
        let rep = check(
            &store,
            &inputs,
            |p, v| {
                let cs = [v[0].clone(), v[1].clone(), v[2].clone()];
                let ct = [v[3].clone(), v[4].clone(), v[5].clone()];
                let c = fusion.fuse_contexts(p, &cs, &ct).unwrap();
                let parts: Vec<Var<f64>> = (0..3).map(|l| weigh(&c[l], &ws[l])).collect();
                ltvc_tensor::sum_all(&parts.iter().collect::<Vec<_>>())
            },
            &probes,
            h,
        );
        out.push(summarize("fuse_contexts", &rep));
    }

    for (name, mode) in [("rd_loss (mse)", DistortionMode::Mse), ("rd_loss (ms-ssim)", DistortionMode::Msssim)] {
        let store = ParamStore::<f64>::new();
        let x = random_tensor(&mut r, [1, 3, 16, 16], 0.0, 1.0);
        let noise = random_tensor(&mut r, [1, 3, 16, 16], -0.1, 0.1);
        let inputs = vec![x.clone(), x.zip_map(&noise, |a, b| a + b), Tensor::scalar(r.gen_range(100.0..3000.0))];
        let probes = random_probes(&store, &inputs, 12, |_| true, &mut r);
        let rep = check(
            &store,
            &inputs,
            |_, v| rd_loss(&v[0], &v[1], &v[2], 1.2, 380.0, mode).unwrap(),
            &probes,
            h,
        );
        out.push(summarize(name, &rep));
    }
    out
}

// ---------------------------------------------------------------- loss arithmetic

pub struct LossReport {
    /// `|rd_loss - 0.4707764|` on the closed-form example.
    pub rd_example_error: f64,
    pub identical_zero_rate: f64,
    /// Largest `|clip_loss - mean|` over random lists.
    pub clip_mean_error: f64,
    pub empty_clip_rejected: bool,
}

/// `d = 0.01` is realised as a uniform offset of `0.1` on a 256x256 frame.
pub fn loss_arithmetic(seed: u64) -> LossReport {
    let x = Tensor::<f64>::full([1, 3, 256, 256], 0.4);
    let xh = Tensor::<f64>::full([1, 3, 256, 256], 0.5);
    let bits = Var::constant(Tensor::scalar(3000.0));
    let l = rd_loss(&Var::constant(x.clone()), &Var::constant(xh), &bits, 0.5, 85.0, DistortionMode::Mse).unwrap();
    let zero = rd_loss(
        &Var::constant(x.clone()),
        &Var::constant(x),
        &Var::constant(Tensor::scalar(0.0)),
        0.9,
        840.0,
        DistortionMode::Mse,
    )
    .unwrap();
    let mut r = rng(seed);
    let mut clip_mean_error = 0.0f64;
    for _ in 0..200 {
        let n = r.gen_range(1..12);
        let vals: Vec<f64> = (0..n).map(|_| r.gen_range(-5.0..5.0)).collect();
        let vars: Vec<Var<f64>> = vals.iter().map(|&v| Var::constant(Tensor::scalar(v))).collect();
        let got = clip_loss(&vars).unwrap().item();
        let mut mean = 0.0;
        for v in &vals {
            mean += v;
        }
        mean /= n as f64;
        clip_mean_error = clip_mean_error.max((got - mean).abs());
    }
    LossReport {
        rd_example_error: (l.item() - 0.4707764).abs(),
        identical_zero_rate: zero.item(),
        clip_mean_error,
        empty_clip_rejected: clip_loss::<f64>(&[]).is_err(),
    }
}

// ---------------------------------------------------------------- rANS

fn random_pmf<R: Rng>(r: &mut R) -> Vec<f64> {
    let n = (SYMBOL_MAX - SYMBOL_MIN + 1) as usize;
    match r.gen_range(0..3) {
        // peaked around a random centre
        0 => {
            let mu = r.gen_range(-20.0..20.0);
            let s: f64 = r.gen_range(0.2..15.0);
            (0..n).map(|k| (-(((k as i32 + SYMBOL_MIN) as f64 - mu) / s).powi(2)).exp()).collect()
        }
        // sparse: most symbols at zero mass
        1 => (0..n).map(|_| if r.gen_bool(0.05) { r.gen_range(0.0..1.0) } else { 0.0 }).collect(),
        _ => (0..n).map(|_| r.gen_range(0.0..1.0)).collect(),
    }
}

fn sample_symbol<R: Rng>(r: &mut R, table: &CdfTable) -> i32 {
    let slot = r.gen_range(0..*table.cdf().last().unwrap());
    table.symbol_at(table.slot_to_index(slot))
}

/// Number of random streams whose decode differs from the input.
pub fn rans_round_trips(streams: usize, seed: u64) -> usize {
    let mut r = rng(seed);
    let mut failures = 0;
    for _ in 0..streams {
        let ntab = r.gen_range(1..4);
        let tables: Vec<CdfTable> = (0..ntab).map(|_| table_from_pmf(&random_pmf(&mut r))).collect();
        let len = r.gen_range(0..300);
        let ctx: Vec<usize> = (0..len).map(|_| r.gen_range(0..ntab)).collect();
        let syms: Vec<i32> = ctx
            .iter()
            .map(|&c| {
                if r.gen_bool(0.1) {
                    r.gen_range(SYMBOL_MIN..=SYMBOL_MAX)
                } else {
                    sample_symbol(&mut r, &tables[c])
                }
            })
            .collect();
        let ok = rans::encode(&syms, &ctx, &tables)
            .and_then(|bytes| rans::decode(&bytes, &ctx, &tables))
            .map(|d| d == syms)
            .unwrap_or(false);
        failures += usize::from(!ok);
    }
    failures
}

// ---------------------------------------------------------------- BD-rate

/// Shape-preserving cubic Hermite interpolant, written from the
/// Fritsch-Carlson construction with the three-point end rule.
pub struct OraclePchip {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl OraclePchip {
    pub fn new(x: &[f64], y: &[f64]) -> Self {
        let n = x.len();
        let s: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / (x[k + 1] - x[k])).collect();
        let hk: Vec<f64> = (0..n - 1).map(|k| x[k + 1] - x[k]).collect();
        let mut m = vec![0.0; n];
        for k in 1..n - 1 {
            if s[k - 1] * s[k] > 0.0 {
                let a = 2.0 * hk[k] + hk[k - 1];
                let b = hk[k] + 2.0 * hk[k - 1];
                m[k] = (a + b) / (a / s[k - 1] + b / s[k]);
            }
        }
        let end = |h0: f64, h1: f64, s0: f64, s1: f64| {
            let d = ((2.0 * h0 + h1) * s0 - h0 * s1) / (h0 + h1);
            if d * s0 <= 0.0 {
                0.0
            } else if s0 * s1 < 0.0 && d.abs() > 3.0 * s0.abs() {
                3.0 * s0
            } else {
                d
            }
        };
        m[0] = end(hk[0], hk[1], s[0], s[1]);
        m[n - 1] = end(hk[n - 2], hk[n - 3], s[n - 2], s[n - 3]);
        OraclePchip {
            x: x.to_vec(),
            y: y.to_vec(),
            m,
        }
    }

    pub fn at(&self, t: f64) -> f64 {
        let k = (0..self.x.len() - 1)
            .find(|&k| t <= self.x[k + 1])
            .unwrap_or(self.x.len() - 2);
        let hk = self.x[k + 1] - self.x[k];
        let u = (t - self.x[k]) / hk;
        let (u2, u3) = (u * u, u * u * u);
        (2.0 * u3 - 3.0 * u2 + 1.0) * self.y[k]
            + (u3 - 2.0 * u2 + u) * hk * self.m[k]
            + (-2.0 * u3 + 3.0 * u2) * self.y[k + 1]
            + (u3 - u2) * hk * self.m[k + 1]
    }
}

/// Trapezoidal BD-rate on `samples` points over the common quality range.
pub fn bd_rate_oracle(anchor: &[CurvePoint], test: &[CurvePoint], samples: usize) -> f64 {
    let fit = |c: &[CurvePoint]| {
        let mut c = c.to_vec();
        c.sort_by(|a, b| a.quality.partial_cmp(&b.quality).unwrap());
        let q: Vec<f64> = c.iter().map(|p| p.quality).collect();
        let lr: Vec<f64> = c.iter().map(|p| p.rate.log10()).collect();
        (OraclePchip::new(&q, &lr), q[0], q[q.len() - 1])
    };
    let (pa, a0, a1) = fit(anchor);
    let (pt, t0, t1) = fit(test);
    let (lo, hi) = (a0.max(t0), a1.min(t1));
    let step = (hi - lo) / (samples - 1) as f64;
    let mut acc = 0.0;
    for i in 0..samples {
        let q = lo + step * i as f64;
        let d = pt.at(q) - pa.at(q);
        acc += if i == 0 || i + 1 == samples { 0.5 * d } else { d };
    }
    let avg = acc * step / (hi - lo);
    (10f64.powf(avg) - 1.0) * 100.0
}

/// Monotone RD curve of `n` points.
pub fn random_curve<R: Rng>(r: &mut R, n: usize) -> Vec<CurvePoint> {
    let mut q = r.gen_range(26.0..30.0);
    let mut lr: f64 = r.gen_range(-1.5..-0.5);
    (0..n)
        .map(|_| {
            q += r.gen_range(0.5..3.0);
            lr += r.gen_range(0.05..0.4);
            CurvePoint {
                rate: 10f64.powf(lr),
                quality: q,
            }
        })
        .collect()
}

pub struct BdReport {
    pub identical: f64,
    pub shifted: f64,
    /// Largest `|bd - oracle| / max(|oracle|, 1)` over random curve pairs.
    pub max_oracle_deviation: f64,
    /// Largest deviation from `bd(A,B) = -bd(B,A) / (1 + bd(B,A)/100)`.
    pub max_antisymmetry_error: f64,
}

pub fn bd_rate_checks(cases: usize, seed: u64) -> BdReport {
    let mut r = rng(seed);
    let anchor = random_curve(&mut r, 4);
    let identical = bd_rate(&anchor, &anchor).unwrap();
    let scaled: Vec<CurvePoint> = anchor
        .iter()
        .map(|p| CurvePoint {
            rate: 0.9 * p.rate,
            quality: p.quality,
        })
        .collect();
    let shifted = bd_rate(&anchor, &scaled).unwrap();
    let mut max_oracle_deviation = 0.0f64;
    let mut max_antisymmetry_error = 0.0f64;
    for _ in 0..cases {
        let n = r.gen_range(4..7);
        let a = random_curve(&mut r, n);
        let m = r.gen_range(4..7);
        let b = random_curve(&mut r, m);
        let Ok(ab) = bd_rate(&a, &b) else { continue };
        let oracle = bd_rate_oracle(&a, &b, 100_000);
        max_oracle_deviation = max_oracle_deviation.max((ab - oracle).abs() / oracle.abs().max(1.0));
        let ba = bd_rate(&b, &a).unwrap();
        let mirror = -ba / (1.0 + ba / 100.0);
        max_antisymmetry_error = max_antisymmetry_error.max((ab - mirror).abs() / mirror.abs().max(1.0));
    }
    BdReport {
        identical,
        shifted,
        max_oracle_deviation,
        max_antisymmetry_error,
    }
}
