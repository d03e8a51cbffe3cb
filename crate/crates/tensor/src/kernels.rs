//! Forward and adjoint kernels behind the differentiable ops.
//!
//! Every function here is plain array arithmetic; the tape in [`crate::Var`]
//! wires them together.

use crate::float::matmul;
use crate::{Float, Tensor};

/// Geometry of a square-kernel 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_size(&self, n: usize) -> usize {
        (n + 2 * self.pad - self.kernel) / self.stride + 1
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.pad == 0
    }
}

#[allow(clippy::too_many_arguments)]
fn im2col<T: Float>(
    x: &[T],
    ci: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    ho: usize,
    wo: usize,
    cols: &mut [T],
) {
    let k = g.kernel;
    let plane_out = ho * wo;
    for c in 0..ci {
        let src = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let dst = &mut cols[row * plane_out..(row + 1) * plane_out];
                // valid output columns: 0 <= ox*stride + kx - pad < w
                let ox_lo = if kx >= g.pad { 0 } else { (g.pad - kx).div_ceil(g.stride) };
                let ox_hi = if w + g.pad > kx {
                    ((w + g.pad - kx - 1) / g.stride + 1).min(wo)
                } else {
                    0
                };
                for oy in 0..ho {
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize || ox_lo >= ox_hi {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let srow = &src[iy as usize * w..(iy as usize + 1) * w];
                    line[..ox_lo].iter_mut().for_each(|v| *v = T::zero());
                    line[ox_hi..].iter_mut().for_each(|v| *v = T::zero());
                    let ix0 = ox_lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        line[ox_lo..ox_hi].copy_from_slice(&srow[ix0..ix0 + (ox_hi - ox_lo)]);
                    } else {
                        for (j, v) in line[ox_lo..ox_hi].iter_mut().enumerate() {
                            *v = srow[ix0 + j * g.stride];
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im<T: Float>(
    cols: &[T],
    ci: usize,
    h: usize,
    w: usize,
    g: ConvGeom,
    ho: usize,
    wo: usize,
    dx: &mut [T],
) {
    let k = g.kernel;
    let plane_out = ho * wo;
    for c in 0..ci {
        let dst = &mut dx[c * h * w..(c + 1) * h * w];
        for ky in 0..k {
            for kx in 0..k {
                let row = (c * k + ky) * k + kx;
                let src = &cols[row * plane_out..(row + 1) * plane_out];
                let ox_lo = if kx >= g.pad { 0 } else { (g.pad - kx).div_ceil(g.stride) };
                let ox_hi = if w + g.pad > kx {
                    ((w + g.pad - kx - 1) / g.stride + 1).min(wo)
                } else {
                    0
                };
                if ox_lo >= ox_hi {
                    continue;
                }
                for oy in 0..ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut dst[iy as usize * w..(iy as usize + 1) * w];
                    let line = &src[oy * wo..(oy + 1) * wo];
                    let ix0 = ox_lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        for (d, &s) in drow[ix0..ix0 + (ox_hi - ox_lo)]
                            .iter_mut()
                            .zip(&line[ox_lo..ox_hi])
                        {
                            *d += s;
                        }
                    } else {
                        for (j, &s) in line[ox_lo..ox_hi].iter().enumerate() {
                            drow[ix0 + j * g.stride] += s;
                        }
                    }
                }
            }
        }
    }
}

/// Cross-correlation `x [N,Ci,H,W] * w [Co,Ci,k,k] + b [1,Co,1,1]`.
pub fn conv2d<T: Float>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, g: ConvGeom) -> Tensor<T> {
    let [n, ci, h, wd] = x.shape();
    let [co, wci, kh, kw] = w.shape();
    assert_eq!(ci, wci, "conv2d: input has {ci} channels, weight expects {wci}");
    assert!(kh == g.kernel && kw == g.kernel, "conv2d: kernel size mismatch");
    let (ho, wo) = (g.out_size(h), g.out_size(wd));
    let kk = ci * g.kernel * g.kernel;
    let mut out = Tensor::zeros([n, co, ho, wo]);
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); kk * ho * wo]
    };
    for s in 0..n {
        let xs = x.sample(s);
        let b_mat: &[T] = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, ci, h, wd, g, ho, wo, &mut cols);
            &cols
        };
        let os = out.sample_mut(s);
        if let Some(b) = b {
            for c in 0..co {
                let bv = b.data()[c];
                os[c * ho * wo..(c + 1) * ho * wo].iter_mut().for_each(|v| *v = bv);
            }
        }
        matmul(co, kk, ho * wo, w.data(), false, b_mat, false, os, b.is_some());
    }
    out
}

/// Adjoint of [`conv2d`] with respect to its input.
pub fn conv2d_backward_input<T: Float>(
    grad: &Tensor<T>,
    w: &Tensor<T>,
    in_shape: [usize; 4],
    g: ConvGeom,
) -> Tensor<T> {
    let [n, ci, h, wd] = in_shape;
    let [_, co, ho, wo] = grad.shape();
    let kk = ci * g.kernel * g.kernel;
    let mut dx = Tensor::zeros(in_shape);
    let mut cols = vec![T::zero(); kk * ho * wo];
    for s in 0..n {
        if g.is_pointwise() {
            matmul(kk, co, ho * wo, w.data(), true, grad.sample(s), false, dx.sample_mut(s), false);
        } else {
            matmul(kk, co, ho * wo, w.data(), true, grad.sample(s), false, &mut cols, false);
            col2im(&cols, ci, h, wd, g, ho, wo, dx.sample_mut(s));
        }
    }
    dx
}

/// Adjoint of [`conv2d`] with respect to weight and bias.
pub fn conv2d_backward_weight<T: Float>(
    grad: &Tensor<T>,
    x: &Tensor<T>,
    w_shape: [usize; 4],
    g: ConvGeom,
    want_bias: bool,
) -> (Tensor<T>, Option<Tensor<T>>) {
    let [n, ci, h, wd] = x.shape();
    let [_, co, ho, wo] = grad.shape();
    let kk = ci * g.kernel * g.kernel;
    let mut dw = Tensor::zeros(w_shape);
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); kk * ho * wo]
    };
    for s in 0..n {
        let b_mat: &[T] = if g.is_pointwise() {
            x.sample(s)
        } else {
            im2col(x.sample(s), ci, h, wd, g, ho, wo, &mut cols);
            &cols
        };
        matmul(co, ho * wo, kk, grad.sample(s), false, b_mat, true, dw.data_mut(), s > 0);
    }
    let db = want_bias.then(|| {
        let mut db = Tensor::zeros([1, co, 1, 1]);
        for s in 0..n {
            for c in 0..co {
                db.data_mut()[c] += grad.channel(s, c).iter().copied().sum::<T>();
            }
        }
        db
    });
    (dw, db)
}

/// 2x2 average pooling, stride 2.
pub fn avg_pool2<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even dimensions, got {h}x{w}");
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    let q = T::cast_from(0.25);
    for s in 0..n {
        for ch in 0..c {
            let src = x.channel(s, ch);
            let dst = out.channel_mut(s, ch);
            for y in 0..ho {
                let r0 = &src[2 * y * w..2 * y * w + w];
                let r1 = &src[(2 * y + 1) * w..(2 * y + 1) * w + w];
                for xo in 0..wo {
                    dst[y * wo + xo] =
                        (r0[2 * xo] + r0[2 * xo + 1] + r1[2 * xo] + r1[2 * xo + 1]) * q;
                }
            }
        }
    }
    out
}

pub fn avg_pool2_backward<T: Float>(grad: &Tensor<T>) -> Tensor<T> {
    let [n, c, ho, wo] = grad.shape();
    let (h, w) = (ho * 2, wo * 2);
    let mut dx = Tensor::zeros([n, c, h, w]);
    let q = T::cast_from(0.25);
    for s in 0..n {
        for ch in 0..c {
            let g = grad.channel(s, ch);
            let d = dx.channel_mut(s, ch);
            for y in 0..h {
                for x in 0..w {
                    d[y * w + x] = g[(y / 2) * wo + x / 2] * q;
                }
            }
        }
    }
    dx
}

/// 3x3 max pooling, stride 1, padding 1. Returns the output and the flat
/// argmax (index into the channel plane) of every output element.
pub fn max_pool3<T: Float>(x: &Tensor<T>) -> (Tensor<T>, Vec<u32>) {
    let [n, c, h, w] = x.shape();
    let mut out = Tensor::zeros([n, c, h, w]);
    let mut arg = vec![0u32; x.len()];
    let p = h * w;
    for s in 0..n {
        for ch in 0..c {
            let base = (s * c + ch) * p;
            let src = x.channel(s, ch);
            let dst = &mut out.data_mut()[base..base + p];
            for y in 0..h {
                for xx in 0..w {
                    let mut best = T::neg_infinity();
                    let mut bi = 0usize;
                    for yy in y.saturating_sub(1)..(y + 2).min(h) {
                        for xk in xx.saturating_sub(1)..(xx + 2).min(w) {
                            let v = src[yy * w + xk];
                            if v > best {
                                best = v;
                                bi = yy * w + xk;
                            }
                        }
                    }
                    dst[y * w + xx] = best;
                    arg[base + y * w + xx] = bi as u32;
                }
            }
        }
    }
    (out, arg)
}

pub fn max_pool3_backward<T: Float>(grad: &Tensor<T>, arg: &[u32]) -> Tensor<T> {
    let shape = grad.shape();
    let p = shape[2] * shape[3];
    let mut dx = Tensor::zeros(shape);
    let g = grad.data();
    let d = dx.data_mut();
    for (plane, chunk) in g.chunks(p).enumerate() {
        let base = plane * p;
        for (i, &gv) in chunk.iter().enumerate() {
            d[base + arg[base + i] as usize] += gv;
        }
    }
    dx
}

/// Bilinear sampling position with border clamping.
#[derive(Clone, Copy)]
struct Tap {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    wx: f64,
    wy: f64,
    /// Whether the sampling coordinate was clamped (zero flow gradient).
    clamped_x: bool,
    clamped_y: bool,
}

#[inline]
fn tap(px: f64, py: f64, w: usize, h: usize) -> Tap {
    let (sx, clamped_x) = clamp_coord(px, w);
    let (sy, clamped_y) = clamp_coord(py, h);
    let x0 = sx.floor();
    let y0 = sy.floor();
    let x0u = x0 as usize;
    let y0u = y0 as usize;
    Tap {
        x0: x0u,
        x1: (x0u + 1).min(w - 1),
        y0: y0u,
        y1: (y0u + 1).min(h - 1),
        wx: sx - x0,
        wy: sy - y0,
        clamped_x,
        clamped_y,
    }
}

#[inline]
fn clamp_coord(p: f64, n: usize) -> (f64, bool) {
    let hi = (n - 1) as f64;
    if p < 0.0 {
        (0.0, true)
    } else if p > hi {
        (hi, true)
    } else if p.is_nan() {
        (0.0, true)
    } else {
        (p, false)
    }
}

/// Backward bilinear warp: `out(p) = src(p + flow(p))`, border-clamped.
///
/// `flow` is `[N,2,H,W]` with channel 0 horizontal, channel 1 vertical.
pub fn warp<T: Float>(src: &Tensor<T>, flow: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = src.shape();
    assert_eq!(flow.shape(), [n, 2, h, w], "warp: flow/src shape mismatch");
    let mut out = Tensor::zeros([n, c, h, w]);
    for s in 0..n {
        let fx = flow.channel(s, 0);
        let fy = flow.channel(s, 1);
        let taps: Vec<Tap> = (0..h * w)
            .map(|i| {
                let (y, x) = (i / w, i % w);
                tap(x as f64 + fx[i].as_f64(), y as f64 + fy[i].as_f64(), w, h)
            })
            .collect();
        for ch in 0..c {
            let sp = src.channel(s, ch).to_vec();
            let dst = out.channel_mut(s, ch);
            for (i, t) in taps.iter().enumerate() {
                let wx = T::cast_from(t.wx);
                let wy = T::cast_from(t.wy);
                let one = T::one();
                let top = sp[t.y0 * w + t.x0] * (one - wx) + sp[t.y0 * w + t.x1] * wx;
                let bot = sp[t.y1 * w + t.x0] * (one - wx) + sp[t.y1 * w + t.x1] * wx;
                dst[i] = top * (one - wy) + bot * wy;
            }
        }
    }
    out
}

/// Adjoints of [`warp`] with respect to the source and the flow.
pub fn warp_backward<T: Float>(
    grad: &Tensor<T>,
    src: &Tensor<T>,
    flow: &Tensor<T>,
    want_src: bool,
    want_flow: bool,
) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
    let [n, c, h, w] = src.shape();
    let mut dsrc = want_src.then(|| Tensor::zeros([n, c, h, w]));
    let mut dflow = want_flow.then(|| Tensor::zeros([n, 2, h, w]));
    for s in 0..n {
        let fx = flow.channel(s, 0);
        let fy = flow.channel(s, 1);
        let taps: Vec<Tap> = (0..h * w)
            .map(|i| {
                let (y, x) = (i / w, i % w);
                tap(x as f64 + fx[i].as_f64(), y as f64 + fy[i].as_f64(), w, h)
            })
            .collect();
        let mut gx = vec![0.0f64; h * w];
        let mut gy = vec![0.0f64; h * w];
        for ch in 0..c {
            let g = grad.channel(s, ch);
            if let Some(ds) = dsrc.as_mut() {
                let d = ds.channel_mut(s, ch);
                for (i, t) in taps.iter().enumerate() {
                    let gv = g[i].as_f64();
                    let (wx, wy) = (t.wx, t.wy);
                    d[t.y0 * w + t.x0] += T::cast_from(gv * (1.0 - wx) * (1.0 - wy));
                    d[t.y0 * w + t.x1] += T::cast_from(gv * wx * (1.0 - wy));
                    d[t.y1 * w + t.x0] += T::cast_from(gv * (1.0 - wx) * wy);
                    d[t.y1 * w + t.x1] += T::cast_from(gv * wx * wy);
                }
            }
            if want_flow {
                let sp = src.channel(s, ch);
                for (i, t) in taps.iter().enumerate() {
                    let gv = g[i].as_f64();
                    let v00 = sp[t.y0 * w + t.x0].as_f64();
                    let v01 = sp[t.y0 * w + t.x1].as_f64();
                    let v10 = sp[t.y1 * w + t.x0].as_f64();
                    let v11 = sp[t.y1 * w + t.x1].as_f64();
                    if !t.clamped_x {
                        gx[i] += gv * ((1.0 - t.wy) * (v01 - v00) + t.wy * (v11 - v10));
                    }
                    if !t.clamped_y {
                        gy[i] += gv * ((1.0 - t.wx) * (v10 - v00) + t.wx * (v11 - v01));
                    }
                }
            }
        }
        if let Some(df) = dflow.as_mut() {
            for (d, v) in df.channel_mut(s, 0).iter_mut().zip(&gx) {
                *d = T::cast_from(*v);
            }
            for (d, v) in df.channel_mut(s, 1).iter_mut().zip(&gy) {
                *d = T::cast_from(*v);
            }
        }
    }
    (dsrc, dflow)
}

/// 1-D taps of half-pixel-centred bilinear 2x upsampling: output `o`
/// reads `(lo, 1-a)` and `(hi, a)`.
#[inline]
fn up_taps(o: usize, n: usize) -> (usize, usize, f64) {
    let i = o / 2;
    if o % 2 == 0 {
        // source coordinate i - 0.25
        if i == 0 {
            (0, 0, 0.0)
        } else {
            (i - 1, i, 0.75)
        }
    } else {
        // source coordinate i + 0.25
        (i, (i + 1).min(n - 1), 0.25)
    }
}

/// Bilinear 2x upsampling (half-pixel centres, edge clamped).
pub fn upsample2<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let (ho, wo) = (2 * h, 2 * w);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    let xt: Vec<_> = (0..wo).map(|o| up_taps(o, w)).collect();
    let yt: Vec<_> = (0..ho).map(|o| up_taps(o, h)).collect();
    for s in 0..n {
        for ch in 0..c {
            let src = x.channel(s, ch);
            let dst = out.channel_mut(s, ch);
            for (oy, &(y0, y1, ay)) in yt.iter().enumerate() {
                for (ox, &(x0, x1, ax)) in xt.iter().enumerate() {
                    let r0 = src[y0 * w + x0].as_f64() * (1.0 - ax) + src[y0 * w + x1].as_f64() * ax;
                    let r1 = src[y1 * w + x0].as_f64() * (1.0 - ax) + src[y1 * w + x1].as_f64() * ax;
                    dst[oy * wo + ox] = T::cast_from(r0 * (1.0 - ay) + r1 * ay);
                }
            }
        }
    }
    out
}

pub fn upsample2_backward<T: Float>(grad: &Tensor<T>) -> Tensor<T> {
    let [n, c, ho, wo] = grad.shape();
    let (h, w) = (ho / 2, wo / 2);
    let mut dx = Tensor::zeros([n, c, h, w]);
    let xt: Vec<_> = (0..wo).map(|o| up_taps(o, w)).collect();
    let yt: Vec<_> = (0..ho).map(|o| up_taps(o, h)).collect();
    for s in 0..n {
        for ch in 0..c {
            let g = grad.channel(s, ch);
            let mut acc = vec![0.0f64; h * w];
            for (oy, &(y0, y1, ay)) in yt.iter().enumerate() {
                for (ox, &(x0, x1, ax)) in xt.iter().enumerate() {
                    let gv = g[oy * wo + ox].as_f64();
                    acc[y0 * w + x0] += gv * (1.0 - ay) * (1.0 - ax);
                    acc[y0 * w + x1] += gv * (1.0 - ay) * ax;
                    acc[y1 * w + x0] += gv * ay * (1.0 - ax);
                    acc[y1 * w + x1] += gv * ay * ax;
                }
            }
            for (d, v) in dx.channel_mut(s, ch).iter_mut().zip(acc) {
                *d = T::cast_from(v);
            }
        }
    }
    dx
}

/// Depth-to-space with factor 2: `[N, 4C, H, W] -> [N, C, 2H, 2W]`.
pub fn pixel_shuffle2<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c4, h, w] = x.shape();
    assert!(c4 % 4 == 0, "pixel_shuffle2 needs a multiple of 4 channels");
    let c = c4 / 4;
    let mut out = Tensor::zeros([n, c, 2 * h, 2 * w]);
    for s in 0..n {
        for ch in 0..c {
            for sub in 0..4 {
                let (dy, dx) = (sub / 2, sub % 2);
                let src = x.channel(s, ch * 4 + sub).to_vec();
                let dst = out.channel_mut(s, ch);
                for y in 0..h {
                    for xx in 0..w {
                        dst[(2 * y + dy) * 2 * w + 2 * xx + dx] = src[y * w + xx];
                    }
                }
            }
        }
    }
    out
}

/// Inverse permutation of [`pixel_shuffle2`].
pub fn pixel_unshuffle2<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h2, w2] = x.shape();
    let (h, w) = (h2 / 2, w2 / 2);
    let mut out = Tensor::zeros([n, c * 4, h, w]);
    for s in 0..n {
        for ch in 0..c {
            let src = x.channel(s, ch).to_vec();
            for sub in 0..4 {
                let (dy, dx) = (sub / 2, sub % 2);
                let dst = out.channel_mut(s, ch * 4 + sub);
                for y in 0..h {
                    for xx in 0..w {
                        dst[y * w + xx] = src[(2 * y + dy) * w2 + 2 * xx + dx];
                    }
                }
            }
        }
    }
    out
}

/// Concatenates along the channel axis.
pub fn concat_channels<T: Float>(parts: &[&Tensor<T>]) -> Tensor<T> {
    let [n, _, h, w] = parts[0].shape();
    for p in parts {
        assert_eq!(
            (p.batch(), p.height(), p.width()),
            (n, h, w),
            "concat: spatial/batch mismatch"
        );
    }
    let c: usize = parts.iter().map(|p| p.channels()).sum();
    let mut data = Vec::with_capacity(n * c * h * w);
    for s in 0..n {
        for p in parts {
            data.extend_from_slice(p.sample(s));
        }
    }
    Tensor::from_vec([n, c, h, w], data)
}

/// Channels `start..start+len`.
pub fn slice_channels<T: Float>(x: &Tensor<T>, start: usize, len: usize) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    assert!(start + len <= c, "slice_channels out of range");
    let p = h * w;
    let mut data = Vec::with_capacity(n * len * p);
    for s in 0..n {
        let smp = x.sample(s);
        data.extend_from_slice(&smp[start * p..(start + len) * p]);
    }
    Tensor::from_vec([n, len, h, w], data)
}

/// Top-left spatial crop to `h x w`.
pub fn crop<T: Float>(x: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let [n, c, hi, wi] = x.shape();
    assert!(h <= hi && w <= wi, "crop larger than input");
    let mut data = Vec::with_capacity(n * c * h * w);
    for s in 0..n {
        for ch in 0..c {
            let src = x.channel(s, ch);
            for y in 0..h {
                data.extend_from_slice(&src[y * wi..y * wi + w]);
            }
        }
    }
    Tensor::from_vec([n, c, h, w], data)
}

/// Zero-extends a cropped tensor back to `h x w` (adjoint of [`crop`]).
pub fn uncrop<T: Float>(g: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let [n, c, hc, wc] = g.shape();
    let mut out = Tensor::zeros([n, c, h, w]);
    for s in 0..n {
        for ch in 0..c {
            let src = g.channel(s, ch).to_vec();
            let dst = out.channel_mut(s, ch);
            for y in 0..hc {
                dst[y * w..y * w + wc].copy_from_slice(&src[y * wc..(y + 1) * wc]);
            }
        }
    }
    out
}

/// Separable "valid" filtering of every channel with the symmetric 1-D
/// kernel `k` (applied along rows and columns).
pub fn blur_valid<T: Float>(x: &Tensor<T>, k: &[f64]) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let r = k.len();
    assert!(h >= r && w >= r, "blur_valid: input smaller than kernel");
    let (ho, wo) = (h - r + 1, w - r + 1);
    let mut out = Tensor::zeros([n, c, ho, wo]);
    let mut tmp = vec![0.0f64; h * wo];
    for s in 0..n {
        for ch in 0..c {
            let src = x.channel(s, ch);
            for y in 0..h {
                for xo in 0..wo {
                    let mut acc = 0.0;
                    for (j, kv) in k.iter().enumerate() {
                        acc += kv * src[y * w + xo + j].as_f64();
                    }
                    tmp[y * wo + xo] = acc;
                }
            }
            let dst = out.channel_mut(s, ch);
            for yo in 0..ho {
                for xo in 0..wo {
                    let mut acc = 0.0;
                    for (j, kv) in k.iter().enumerate() {
                        acc += kv * tmp[(yo + j) * wo + xo];
                    }
                    dst[yo * wo + xo] = T::cast_from(acc);
                }
            }
        }
    }
    out
}

pub fn blur_valid_backward<T: Float>(grad: &Tensor<T>, k: &[f64], h: usize, w: usize) -> Tensor<T> {
    let [n, c, ho, wo] = grad.shape();
    let mut dx = Tensor::zeros([n, c, h, w]);
    let mut tmp = vec![0.0f64; h * wo];
    for s in 0..n {
        for ch in 0..c {
            let g = grad.channel(s, ch);
            tmp.iter_mut().for_each(|v| *v = 0.0);
            for yo in 0..ho {
                for xo in 0..wo {
                    let gv = g[yo * wo + xo].as_f64();
                    for (j, kv) in k.iter().enumerate() {
                        tmp[(yo + j) * wo + xo] += kv * gv;
                    }
                }
            }
            let dst = dx.channel_mut(s, ch);
            let mut row = vec![0.0f64; w];
            for y in 0..h {
                row.iter_mut().for_each(|v| *v = 0.0);
                for xo in 0..wo {
                    let tv = tmp[y * wo + xo];
                    for (j, kv) in k.iter().enumerate() {
                        row[xo + j] += kv * tv;
                    }
                }
                for (d, v) in dst[y * w..(y + 1) * w].iter_mut().zip(&row) {
                    *d = T::cast_from(*v);
                }
            }
        }
    }
    dx
}
