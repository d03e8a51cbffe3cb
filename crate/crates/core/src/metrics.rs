//! Quality metrics on display-region frames.

use ltvc_tensor::{Float, Tensor, Var};

use crate::error::{Error, Result};
use crate::frame::Frame;

/// Reported value for identical frames.
pub const PSNR_CLAMP_DB: f64 = 100.0;

/// Per-scale exponents of the 5-scale MS-SSIM.
pub const MSSSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const MSSSIM_MIN_SIDE: usize = 160;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn same_display(a: &Frame, b: &Frame) -> Result<()> {
    if (a.display_height(), a.display_width()) != (b.display_height(), b.display_width()) {
        return Err(Error::dim(format!(
            "metric inputs are {}x{} and {}x{}",
            a.display_width(),
            a.display_height(),
            b.display_width(),
            b.display_height()
        )));
    }
    Ok(())
}

/// Mean squared error over the display region of all three channels.
pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    same_display(a, b)?;
    let (da, db) = (a.display_data(), b.display_data());
    let sum: f64 = da.iter().zip(&db).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum();
    Ok(sum / da.len() as f64)
}

/// `10 log10(1 / MSE)`, clamped to [`PSNR_CLAMP_DB`].
pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CLAMP_DB;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CLAMP_DB)
}

pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Mean of per-frame PSNRs.
pub fn sequence_psnr(a: &[Frame], b: &[Frame]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::Contract(format!(
            "sequence PSNR needs equal non-empty lists, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let total: f64 = a.iter().zip(b).map(|(x, y)| psnr(x, y)).sum::<Result<f64>>()?;
    Ok(total / a.len() as f64)
}

/// Normalised 1-D Gaussian of odd length `size`.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let k: Vec<f64> = (0..size).map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Window used at a scale whose shorter side is `side`: the standard 11 taps,
/// or the largest odd length that fits.
fn window_for(side: usize) -> Vec<f64> {
    let size = if side >= SSIM_WINDOW { SSIM_WINDOW } else { side - (1 - side % 2) };
    gaussian_window(size.max(1), SSIM_SIGMA)
}

/// Number of scales usable on a `side`-pixel image with the full window at
/// every scale (at most 5, at least 1).
pub fn adaptive_scales(side: usize) -> usize {
    (1..=5).rev().find(|&s| side >> (s - 1) >= SSIM_WINDOW).unwrap_or(1)
}

fn even_crop<T: Float>(v: &Var<T>) -> Var<T> {
    let [_, _, h, w] = v.shape();
    if h % 2 == 0 && w % 2 == 0 {
        v.clone()
    } else {
        v.crop(h - h % 2, w - w % 2)
    }
}

/// `(mean luminance-contrast-structure, mean contrast-structure)` of one
/// single-channel scale.
fn ssim_terms<T: Float>(x: &Var<T>, y: &Var<T>, k: &[f64]) -> (Var<T>, Var<T>) {
    let mx = x.blur_valid(k);
    let my = y.blur_valid(k);
    let sxx = x.sqr().blur_valid(k).sub(&mx.sqr());
    let syy = y.sqr().blur_valid(k).sub(&my.sqr());
    let sxy = x.mul(y).blur_valid(k).sub(&mx.mul(&my));
    let cs_map = sxy.scale(2.0).add_scalar(C2).div(&sxx.add(&syy).add_scalar(C2));
    let l_map = mx.mul(&my).scale(2.0).add_scalar(C1).div(&mx.sqr().add(&my.sqr()).add_scalar(C1));
    (l_map.mul(&cs_map).mean(), cs_map.mean())
}

/// Differentiable MS-SSIM of `[1, C, H, W]` tensors over `weights.len()`
/// scales, averaged over channels.
/// Clamped terms are floored at `1e-12` so the power stays differentiable.
pub fn msssim_var<T: Float>(a: &Var<T>, b: &Var<T>, weights: &[f64]) -> Var<T> {
    msssim_floored(a, b, weights, 1e-12)
}

fn msssim_floored<T: Float>(a: &Var<T>, b: &Var<T>, weights: &[f64], floor: f64) -> Var<T> {
    assert_eq!(a.shape(), b.shape(), "MS-SSIM inputs must align");
    // the full standard set is used as published; a truncated set is
    // renormalised so its exponents sum to one
    let total: f64 = if weights.len() == MSSSIM_WEIGHTS.len() { 1.0 } else { weights.iter().sum() };
    let [_, channels, _, _] = a.shape();
    let mut per_channel = Vec::with_capacity(channels);
    for c in 0..channels {
        let (mut x, mut y) = (a.slice_channels(c, 1), b.slice_channels(c, 1));
        let mut acc: Option<Var<T>> = None;
        for (j, &w) in weights.iter().enumerate() {
            let [_, _, h, wd] = x.shape();
            let k = window_for(h.min(wd));
            let (ssim, cs) = ssim_terms(&x, &y, &k);
            let term = if j + 1 == weights.len() { ssim } else { cs };
            // negative structure terms carry no meaningful power
            let term = term.relu().add_scalar(floor).powf(w / total);
            acc = Some(match acc {
                Some(a) => a.mul(&term),
                None => term,
            });
            if j + 1 < weights.len() {
                x = even_crop(&x).avg_pool2();
                y = even_crop(&y).avg_pool2();
            }
        }
        per_channel.push(acc.expect("at least one scale"));
    }
    let refs: Vec<&Var<T>> = per_channel.iter().collect();
    ltvc_tensor::sum_all(&refs).scale(1.0 / channels as f64)
}

/// Standard 5-scale MS-SSIM on the display region.
pub fn msssim(a: &Frame, b: &Frame) -> Result<f64> {
    same_display(a, b)?;
    let (h, w) = (a.display_height(), a.display_width());
    if h.min(w) < MSSSIM_MIN_SIDE {
        return Err(Error::dim(format!(
            "MS-SSIM needs frames of at least {MSSSIM_MIN_SIDE}x{MSSSIM_MIN_SIDE}, got {w}x{h}"
        )));
    }
    let to_var = |f: &Frame| {
        let d: Vec<f64> = f.display_data().iter().map(|&v| v as f64).collect();
        Var::constant(Tensor::from_vec([1, 3, h, w], d))
    };
    Ok(msssim_floored(&to_var(a), &to_var(b), &MSSSIM_WEIGHTS, 0.0).item())
}

/// MS-SSIM with as many standard scales as the frame supports; equals
/// [`msssim`] on frames of at least 160 px.
pub fn msssim_adaptive(a: &Frame, b: &Frame) -> Result<f64> {
    same_display(a, b)?;
    let (h, w) = (a.display_height(), a.display_width());
    let scales = adaptive_scales(h.min(w));
    let to_var = |f: &Frame| {
        let d: Vec<f64> = f.display_data().iter().map(|&v| v as f64).collect();
        Var::constant(Tensor::from_vec([1, 3, h, w], d))
    };
    Ok(msssim_floored(&to_var(a), &to_var(b), &MSSSIM_WEIGHTS[..scales], 0.0).item())
}
