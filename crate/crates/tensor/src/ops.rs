use crate::kernels::{self, ConvGeom};
use crate::{Float, Tensor, Var};

fn unary<T: Float>(x: &Var<T>, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + 'static) -> Var<T> {
    // df(input, output) -> local derivative
    let out = x.value().map(f);
    let xin = x.shared();
    let xo = std::rc::Rc::new(out.clone());
    Var::from_op(out, &[x], move |g| {
        let mut d = g.clone();
        for ((dv, &i), &o) in d.data_mut().iter_mut().zip(xin.data()).zip(xo.data()) {
            *dv *= df(i, o);
        }
        vec![Some(d)]
    })
}

impl<T: Float> Var<T> {
    pub fn add(&self, other: &Var<T>) -> Var<T> {
        let out = self.value().zip_map(other.value(), |a, b| a + b);
        Var::from_op(out, &[self, other], |g| vec![Some(g.clone()), Some(g.clone())])
    }

    pub fn sub(&self, other: &Var<T>) -> Var<T> {
        let out = self.value().zip_map(other.value(), |a, b| a - b);
        Var::from_op(out, &[self, other], |g| vec![Some(g.clone()), Some(g.map(|v| -v))])
    }

    pub fn mul(&self, other: &Var<T>) -> Var<T> {
        let out = self.value().zip_map(other.value(), |a, b| a * b);
        let (a, b) = (self.shared(), other.shared());
        let need = [self.requires_grad(), other.requires_grad()];
        Var::from_op(out, &[self, other], move |g| {
            vec![
                need[0].then(|| g.zip_map(&b, |g, b| g * b)),
                need[1].then(|| g.zip_map(&a, |g, a| g * a)),
            ]
        })
    }

    pub fn div(&self, other: &Var<T>) -> Var<T> {
        let out = self.value().zip_map(other.value(), |a, b| a / b);
        let (a, b) = (self.shared(), other.shared());
        let need = [self.requires_grad(), other.requires_grad()];
        Var::from_op(out, &[self, other], move |g| {
            vec![
                need[0].then(|| g.zip_map(&b, |g, b| g / b)),
                need[1].then(|| {
                    let mut d = g.clone();
                    for ((dv, &av), &bv) in d.data_mut().iter_mut().zip(a.data()).zip(b.data()) {
                        *dv = -*dv * av / (bv * bv);
                    }
                    d
                }),
            ]
        })
    }

    /// Multiplies every element by the one-element variable `s`.
    pub fn mul_scalar_var(&self, s: &Var<T>) -> Var<T> {
        let sv = s.item();
        let out = self.value().map(|v| v * sv);
        let x = self.shared();
        let need = [self.requires_grad(), s.requires_grad()];
        Var::from_op(out, &[self, s], move |g| {
            vec![
                need[0].then(|| g.map(|v| v * sv)),
                need[1].then(|| {
                    let dot: f64 = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(a, b)| a.as_f64() * b.as_f64())
                        .sum();
                    Tensor::scalar(T::cast_from(dot))
                }),
            ]
        })
    }

    pub fn scale(&self, s: f64) -> Var<T> {
        let s = T::cast_from(s);
        Var::from_op(self.value().map(|v| v * s), &[self], move |g| vec![Some(g.map(|v| v * s))])
    }

    pub fn add_scalar(&self, c: f64) -> Var<T> {
        let c = T::cast_from(c);
        Var::from_op(self.value().map(|v| v + c), &[self], |g| vec![Some(g.clone())])
    }

    pub fn neg(&self) -> Var<T> {
        self.scale(-1.0)
    }

    pub fn sigmoid(&self) -> Var<T> {
        unary(self, |v| T::one() / (T::one() + (-v).exp()), |_, o| o * (T::one() - o))
    }

    pub fn tanh(&self) -> Var<T> {
        unary(self, |v| v.tanh(), |_, o| T::one() - o * o)
    }

    pub fn relu(&self) -> Var<T> {
        self.leaky_relu(0.0)
    }

    pub fn leaky_relu(&self, slope: f64) -> Var<T> {
        let s = T::cast_from(slope);
        unary(
            self,
            move |v| if v > T::zero() { v } else { v * s },
            move |i, _| if i > T::zero() { T::one() } else { s },
        )
    }

    /// `ln(1 + e^x)`, evaluated stably.
    pub fn softplus(&self) -> Var<T> {
        unary(
            self,
            |v| {
                if v > T::cast_from(20.0) {
                    v
                } else {
                    v.exp().ln_1p()
                }
            },
            |i, _| T::one() / (T::one() + (-i).exp()),
        )
    }

    pub fn exp(&self) -> Var<T> {
        unary(self, |v| v.exp(), |_, o| o)
    }

    pub fn ln(&self) -> Var<T> {
        unary(self, |v| v.ln(), |i, _| T::one() / i)
    }

    pub fn sqr(&self) -> Var<T> {
        unary(self, |v| v * v, |i, _| i + i)
    }

    pub fn powf(&self, p: f64) -> Var<T> {
        let pt = T::cast_from(p);
        unary(self, move |v| v.powf(pt), move |i, _| pt * i.powf(pt - T::one()))
    }

    /// Clamp with zero gradient outside `[lo, hi]`.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var<T> {
        let (l, h) = (T::cast_from(lo), T::cast_from(hi));
        unary(
            self,
            move |v| v.max(l).min(h),
            move |i, _| if i >= l && i <= h { T::one() } else { T::zero() },
        )
    }

    /// `max(x, bound)` that still lets gradients through where they would
    /// push `x` upwards past the bound.
    pub fn lower_bound(&self, bound: f64) -> Var<T> {
        let b = T::cast_from(bound);
        let out = self.value().map(|v| v.max(b));
        let x = self.shared();
        Var::from_op(out, &[self], move |g| {
            let mut d = g.clone();
            for (dv, &xv) in d.data_mut().iter_mut().zip(x.data()) {
                if xv < b && *dv > T::zero() {
                    *dv = T::zero();
                }
            }
            vec![Some(d)]
        })
    }

    /// Rounds to the nearest integer; the gradient is passed through as if
    /// the op were the identity.
    pub fn round_ste(&self) -> Var<T> {
        Var::from_op(self.value().map(|v| v.round()), &[self], |g| vec![Some(g.clone())])
    }

    pub fn sum(&self) -> Var<T> {
        let shape = self.shape();
        Var::from_op(Tensor::scalar(self.value().sum()), &[self], move |g| {
            vec![Some(Tensor::full(shape, g.data()[0]))]
        })
    }

    pub fn mean(&self) -> Var<T> {
        let n = self.value().len() as f64;
        self.sum().scale(1.0 / n)
    }

    pub fn conv2d(&self, w: &Var<T>, b: Option<&Var<T>>, g: ConvGeom) -> Var<T> {
        let out = kernels::conv2d(self.value(), w.value(), b.map(|b| b.value()), g);
        let x = self.shared();
        let wv = w.shared();
        let need_x = self.requires_grad();
        let need_w = w.requires_grad() || b.is_some_and(|b| b.requires_grad());
        let in_shape = self.shape();
        let has_b = b.is_some();
        let mut inputs = vec![self, w];
        if let Some(b) = b {
            inputs.push(b);
        }
        Var::from_op(out, &inputs, move |gr| {
            let dx = need_x.then(|| kernels::conv2d_backward_input(gr, &wv, in_shape, g));
            let (dw, db) = if need_w {
                let (dw, db) = kernels::conv2d_backward_weight(gr, &x, wv.shape(), g, has_b);
                (Some(dw), db)
            } else {
                (None, None)
            };
            let mut v = vec![dx, dw];
            if has_b {
                v.push(db);
            }
            v
        })
    }

    pub fn avg_pool2(&self) -> Var<T> {
        Var::from_op(kernels::avg_pool2(self.value()), &[self], |g| {
            vec![Some(kernels::avg_pool2_backward(g))]
        })
    }

    pub fn max_pool3(&self) -> Var<T> {
        let (out, arg) = kernels::max_pool3(self.value());
        Var::from_op(out, &[self], move |g| vec![Some(kernels::max_pool3_backward(g, &arg))])
    }

    pub fn upsample2(&self) -> Var<T> {
        Var::from_op(kernels::upsample2(self.value()), &[self], |g| {
            vec![Some(kernels::upsample2_backward(g))]
        })
    }

    pub fn pixel_shuffle2(&self) -> Var<T> {
        Var::from_op(kernels::pixel_shuffle2(self.value()), &[self], |g| {
            vec![Some(kernels::pixel_unshuffle2(g))]
        })
    }

    pub fn slice_channels(&self, start: usize, len: usize) -> Var<T> {
        let [n, c, h, w] = self.shape();
        Var::from_op(kernels::slice_channels(self.value(), start, len), &[self], move |g| {
            let mut d = Tensor::zeros([n, c, h, w]);
            let p = h * w;
            for s in 0..n {
                d.sample_mut(s)[start * p..(start + len) * p].copy_from_slice(g.sample(s));
            }
            vec![Some(d)]
        })
    }

    pub fn crop(&self, h: usize, w: usize) -> Var<T> {
        if self.shape()[2] == h && self.shape()[3] == w {
            return self.clone();
        }
        let [_, _, hi, wi] = self.shape();
        Var::from_op(kernels::crop(self.value(), h, w), &[self], move |g| {
            vec![Some(kernels::uncrop(g, hi, wi))]
        })
    }

    /// Backward bilinear warp by `flow` (`[N,2,H,W]`, border clamped).
    pub fn warp(&self, flow: &Var<T>) -> Var<T> {
        let out = kernels::warp(self.value(), flow.value());
        let (src, fl) = (self.shared(), flow.shared());
        let need = [self.requires_grad(), flow.requires_grad()];
        Var::from_op(out, &[self, flow], move |g| {
            let (ds, df) = kernels::warp_backward(g, &src, &fl, need[0], need[1]);
            vec![ds, df]
        })
    }

    /// Separable "valid" filtering with a symmetric 1-D kernel.
    pub fn blur_valid(&self, k: &[f64]) -> Var<T> {
        let k = k.to_vec();
        let [_, _, h, w] = self.shape();
        Var::from_op(kernels::blur_valid(self.value(), &k), &[self], move |g| {
            vec![Some(kernels::blur_valid_backward(g, &k, h, w))]
        })
    }
}

/// Channel concatenation of several variables.
pub fn concat<T: Float>(parts: &[&Var<T>]) -> Var<T> {
    let vals: Vec<&Tensor<T>> = parts.iter().map(|p| p.value()).collect();
    let out = kernels::concat_channels(&vals);
    let widths: Vec<usize> = parts.iter().map(|p| p.shape()[1]).collect();
    let needs: Vec<bool> = parts.iter().map(|p| p.requires_grad()).collect();
    Var::from_op(out, parts, move |g| {
        let mut off = 0;
        widths
            .iter()
            .zip(&needs)
            .map(|(&c, &need)| {
                let r = need.then(|| kernels::slice_channels(g, off, c));
                off += c;
                r
            })
            .collect()
    })
}

/// Sum of several same-shape variables.
pub fn sum_all<T: Float>(parts: &[&Var<T>]) -> Var<T> {
    let mut out = parts[0].value().clone();
    for p in &parts[1..] {
        out.add_assign(p.value());
    }
    let n = parts.len();
    Var::from_op(out, parts, move |g| (0..n).map(|_| Some(g.clone())).collect())
}
