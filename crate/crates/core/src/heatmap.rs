//! Channel-mean activation maps of the full-resolution context.

use std::path::Path;

use ltvc_tensor::Tensor;

use crate::error::{Error, Result};

/// Single-channel map with values in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
}

/// Per-pixel mean over channels, min-max normalised; a constant mean maps
/// to all zeros.
pub fn context_heatmap(ctx: &Tensor<f32>, channels: usize) -> Result<Heatmap> {
    let [n, c, h, w] = ctx.shape();
    if n != 1 || c != channels {
        return Err(Error::dim(format!(
            "heatmap input {:?} is not a single {channels}-channel map",
            ctx.shape()
        )));
    }
    let mut mean = vec![0.0f64; h * w];
    for ch in 0..c {
        for (m, &v) in mean.iter_mut().zip(ctx.channel(0, ch)) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= c as f64);
    let lo = mean.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::Numeric("heatmap input is not finite".into()));
    }
    let values = if hi > lo {
        mean.iter().map(|&m| ((m - lo) / (hi - lo)) as f32).collect()
    } else {
        vec![0.0; h * w]
    };
    Ok(Heatmap { height: h, width: w, values })
}

impl Heatmap {
    /// 8-bit grayscale PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.values.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
        let img = image::GrayImage::from_raw(self.width as u32, self.height as u32, bytes)
            .ok_or_else(|| Error::dim("heatmap buffer does not match its size"))?;
        img.save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}
