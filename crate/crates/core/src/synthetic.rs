//! Procedural test sequences: a smooth colour texture translating at a
//! constant sub-pixel velocity.

use crate::error::Result;
use crate::frame::Frame;

/// Parameters of [`moving_texture`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Motion {
    pub dx: f64,
    pub dy: f64,
}

/// `frames` RGB frames of `height x width`. The texture is evaluated in
/// closed form at each shifted position, so no resampling error enters.
pub fn moving_texture(frames: usize, height: usize, width: usize, motion: Motion, seed: u64) -> Result<Vec<Frame>> {
    let phase = (seed % 97) as f64 * 0.173;
    (0..frames)
        .map(|t| {
            let (ox, oy) = (motion.dx * t as f64, motion.dy * t as f64);
            let mut data = Vec::with_capacity(3 * height * width);
            for c in 0..3 {
                let cf = c as f64;
                for y in 0..height {
                    for x in 0..width {
                        let u = (x as f64 - ox) / width as f64;
                        let v = (y as f64 - oy) / height as f64;
                        let s = 0.5
                            + 0.22 * (std::f64::consts::TAU * (1.3 * u + 0.4 * v) + phase + cf).sin()
                            + 0.15 * (std::f64::consts::TAU * (0.5 * u - 1.1 * v) + 2.0 * phase - 0.7 * cf).cos()
                            + 0.08 * (std::f64::consts::TAU * 2.7 * (u + v) + cf * 1.9).sin();
                        data.push(s.clamp(0.0, 1.0) as f32);
                    }
                }
            }
            Frame::new(height, width, data)
        })
        .collect()
}
