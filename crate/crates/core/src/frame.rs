//! Frame ingestion: raw 4:2:0 readers, BT.709 conversion, padding and
//! training crops.

use std::fs;
use std::path::{Path, PathBuf};

use ltvc_tensor::{Float, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum frame side accepted anywhere in the codec.
pub const MIN_SIDE: usize = 16;
/// Padded frame dimensions are multiples of this.
pub const PAD_MULTIPLE: usize = 16;

/// One RGB picture with values in `[0, 1]`, stored planar.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pixels: Tensor<f32>,
    display_height: usize,
    display_width: usize,
}

impl Frame {
    /// `data` is planar RGB (`3 * height * width` values in `[0, 1]`).
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(Error::dim(format!(
                "frame {width}x{height} is smaller than the {MIN_SIDE}x{MIN_SIDE} minimum"
            )));
        }
        if data.len() != 3 * height * width {
            return Err(Error::dim(format!(
                "expected {} samples for a {width}x{height} frame, got {}",
                3 * height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Numeric(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Frame {
            pixels: Tensor::from_vec([1, 3, height, width], data),
            display_height: height,
            display_width: width,
        })
    }

    /// Builds a frame from a `[1, 3, H, W]` tensor, clamping into `[0, 1]`.
    pub fn from_tensor_clamped(t: &Tensor<f32>, display_height: usize, display_width: usize) -> Result<Self> {
        let [n, c, h, w] = t.shape();
        if n != 1 || c != 3 {
            return Err(Error::dim(format!("expected [1,3,H,W] tensor, got {:?}", t.shape())));
        }
        let mut f = Frame::new(h, w, t.data().iter().map(|v| v.clamp(0.0, 1.0)).collect())?;
        f.set_display(display_height, display_width)?;
        Ok(f)
    }

    /// From interleaved 8-bit RGB.
    pub fn from_rgb8(height: usize, width: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != 3 * height * width {
            return Err(Error::dim("RGB buffer length does not match dimensions"));
        }
        let p = height * width;
        let mut data = vec![0.0f32; 3 * p];
        for (i, px) in rgb.chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c * p + i] = px[c] as f32 / 255.0;
            }
        }
        Frame::new(height, width, data)
    }

    /// Interleaved 8-bit RGB of the full (padded) area, rounded.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let p = self.height() * self.width();
        let d = self.pixels.data();
        let mut out = Vec::with_capacity(3 * p);
        for i in 0..p {
            for c in 0..3 {
                out.push((d[c * p + i] * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
        out
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn display_height(&self) -> usize {
        self.display_height
    }

    pub fn display_width(&self) -> usize {
        self.display_width
    }

    pub fn set_display(&mut self, height: usize, width: usize) -> Result<()> {
        if height > self.height() || width > self.width() || height == 0 || width == 0 {
            return Err(Error::dim(format!(
                "display size {width}x{height} does not fit in {}x{}",
                self.width(),
                self.height()
            )));
        }
        self.display_height = height;
        self.display_width = width;
        Ok(())
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.pixels
    }

    pub fn data(&self) -> &[f32] {
        self.pixels.data()
    }

    /// Sample of channel `c` at row `y`, column `x`.
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.pixels.at(0, c, y, x)
    }

    /// The frame as a constant `[1, 3, H, W]` variable.
    pub fn to_var<T: Float>(&self) -> Var<T> {
        Var::constant(self.pixels.cast())
    }

    /// Whether the frame can enter the codec (padded to multiples of 16).
    pub fn is_codec_ready(&self) -> bool {
        self.height() % PAD_MULTIPLE == 0 && self.width() % PAD_MULTIPLE == 0
    }

    /// The display region as its own frame.
    pub fn crop_to_display(&self) -> Frame {
        let (h, w) = (self.display_height, self.display_width);
        if h == self.height() && w == self.width() {
            return self.clone();
        }
        Frame {
            pixels: ltvc_tensor::kernels::crop(&self.pixels, h, w),
            display_height: h,
            display_width: w,
        }
    }

    /// Display-region samples, planar.
    pub fn display_data(&self) -> Vec<f32> {
        self.crop_to_display().pixels.into_vec()
    }
}

/// Replicate-pads right and bottom to the next multiples of 16; display
/// dimensions are kept.
pub fn pad_to_multiple16(f: &Frame) -> Frame {
    let (h, w) = (f.height(), f.width());
    let (hp, wp) = (h.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE, w.div_ceil(PAD_MULTIPLE) * PAD_MULTIPLE);
    if hp == h && wp == w {
        return f.clone();
    }
    let mut out = Tensor::zeros([1, 3, hp, wp]);
    for c in 0..3 {
        let src = f.pixels.channel(0, c);
        let dst = out.channel_mut(0, c);
        for y in 0..hp {
            let sy = y.min(h - 1);
            for x in 0..wp {
                dst[y * wp + x] = src[sy * w + x.min(w - 1)];
            }
        }
    }
    Frame {
        pixels: out,
        display_height: f.display_height,
        display_width: f.display_width,
    }
}

/// Same random `size x size` window cut from every frame of a clip.
pub fn crop_random_patch<R: Rng>(frames: &[Frame], size: usize, rng: &mut R) -> Result<Vec<Frame>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Contract("crop_random_patch on an empty clip".into()))?;
    let (h, w) = (first.height(), first.width());
    if frames.iter().any(|f| f.height() != h || f.width() != w) {
        return Err(Error::dim("clip frames differ in size"));
    }
    if size > h || size > w {
        return Err(Error::dim(format!("patch {size} exceeds frame {w}x{h}")));
    }
    let y0 = rng.gen_range(0..=h - size);
    let x0 = rng.gen_range(0..=w - size);
    frames
        .iter()
        .map(|f| {
            let mut data = Vec::with_capacity(3 * size * size);
            for c in 0..3 {
                let src = f.pixels.channel(0, c);
                for y in y0..y0 + size {
                    data.extend_from_slice(&src[y * w + x0..y * w + x0 + size]);
                }
            }
            Frame::new(size, size, data)
        })
        .collect()
}

/// One 8-bit sample plane.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::dim(format!(
                "plane {width}x{height} needs {} bytes, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Plane { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Plane {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x] as f64
    }
}

pub const KR: f64 = 0.2126;
pub const KB: f64 = 0.0722;
pub const KG: f64 = 1.0 - KR - KB;

/// Limited-range BT.709 sample triple (8-bit code values, unclamped) to
/// normalised RGB (unclamped).
pub fn bt709_pixel_to_rgb(y: f64, cb: f64, cr: f64) -> [f64; 3] {
    let yn = (y - 16.0) / 219.0;
    let pb = (cb - 128.0) / 224.0;
    let pr = (cr - 128.0) / 224.0;
    let r = yn + 2.0 * (1.0 - KR) * pr;
    let b = yn + 2.0 * (1.0 - KB) * pb;
    let g = (yn - KR * r - KB * b) / KG;
    [r, g, b]
}

/// Exact inverse of [`bt709_pixel_to_rgb`]: normalised RGB to 8-bit-scale
/// limited-range code values (unrounded).
pub fn rgb_to_bt709_pixel(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb;
    let yn = KR * r + KG * g + KB * b;
    let pb = (b - yn) / (2.0 * (1.0 - KB));
    let pr = (r - yn) / (2.0 * (1.0 - KR));
    [16.0 + 219.0 * yn, 128.0 + 224.0 * pb, 128.0 + 224.0 * pr]
}

/// Chroma sample at luma position `(x, y)`: co-sited top-left siting,
/// bilinear between the neighbouring chroma samples.
fn upsample_chroma(p: &Plane, x: usize, y: usize) -> f64 {
    let (cx0, cy0) = (x / 2, y / 2);
    let cx1 = if x % 2 == 1 { (cx0 + 1).min(p.width - 1) } else { cx0 };
    let cy1 = if y % 2 == 1 { (cy0 + 1).min(p.height - 1) } else { cy0 };
    0.25 * (p.get(cx0, cy0) + p.get(cx1, cy0) + p.get(cx0, cy1) + p.get(cx1, cy1))
}

/// Converts 8-bit limited-range 4:2:0 planes to an RGB frame.
pub fn bt709_to_rgb(y: &Plane, cb: &Plane, cr: &Plane) -> Result<Frame> {
    let (cw, ch) = (y.width.div_ceil(2), y.height.div_ceil(2));
    for (name, p) in [("Cb", cb), ("Cr", cr)] {
        if p.width != cw || p.height != ch {
            return Err(Error::dim(format!(
                "{name} plane is {}x{}, expected {cw}x{ch} for {}x{} luma",
                p.width, p.height, y.width, y.height
            )));
        }
    }
    let (w, h) = (y.width, y.height);
    let p = w * h;
    let mut data = vec![0.0f32; 3 * p];
    for yy in 0..h {
        for xx in 0..w {
            let rgb = bt709_pixel_to_rgb(y.get(xx, yy), upsample_chroma(cb, xx, yy), upsample_chroma(cr, xx, yy));
            for c in 0..3 {
                data[c * p + yy * w + xx] = rgb[c].clamp(0.0, 1.0) as f32;
            }
        }
    }
    Frame::new(h, w, data)
}

/// Stored pixel layout of a sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PixelFormat {
    /// Raw planar 8-bit limited-range YCbCr 4:2:0.
    #[serde(rename = "yuv420p")]
    Yuv420p,
    /// Directory of 8-bit RGB images, frames in lexicographic order.
    #[serde(rename = "rgb")]
    Rgb8,
}

impl std::str::FromStr for PixelFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "yuv420p" | "yuv" => Ok(PixelFormat::Yuv420p),
            "rgb" | "rgb8" => Ok(PixelFormat::Rgb8),
            other => Err(Error::Config(format!("unknown pixel format tag '{other}'"))),
        }
    }
}

/// Where a sequence lives and how it is stored. Keys mirror the config
/// file: `source`, `format`, `width`, `height`, `frames`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceSpec {
    pub source: PathBuf,
    pub format: PixelFormat,
    pub width: usize,
    pub height: usize,
    pub frames: usize,
}

impl SequenceSpec {
    fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::Config("sequence frame count must be at least 1".into()));
        }
        if self.width < MIN_SIDE || self.height < MIN_SIDE {
            return Err(Error::Config(format!(
                "sequence size {}x{} is below the {MIN_SIDE}px minimum",
                self.width, self.height
            )));
        }
        Ok(())
    }

    /// Short name used in reports (file or directory stem).
    pub fn name(&self) -> String {
        self.source
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "sequence".into())
    }
}

/// Reads the first `n` frames of a sequence as display-size RGB frames.
pub fn load_sequence(spec: &SequenceSpec, n: usize) -> Result<Vec<Frame>> {
    spec.validate()?;
    if n > spec.frames {
        return Err(Error::Contract(format!(
            "requested {n} frames but the sequence declares {}",
            spec.frames
        )));
    }
    match spec.format {
        PixelFormat::Yuv420p => load_yuv(spec, n),
        PixelFormat::Rgb8 => load_rgb_dir(spec, n),
    }
}

fn load_yuv(spec: &SequenceSpec, n: usize) -> Result<Vec<Frame>> {
    let (w, h) = (spec.width, spec.height);
    let (cw, ch) = (w.div_ceil(2), h.div_ceil(2));
    let frame_bytes = w * h + 2 * cw * ch;
    let bytes = fs::read(&spec.source).map_err(|source| Error::FrameIo {
        path: spec.source.clone(),
        frame: 0,
        source,
    })?;
    (0..n)
        .map(|i| {
            let start = i * frame_bytes;
            let chunk = bytes.get(start..start + frame_bytes).ok_or_else(|| Error::Truncated {
                path: spec.source.clone(),
                frame: i,
            })?;
            let y = Plane::new(w, h, chunk[..w * h].to_vec())?;
            let cb = Plane::new(cw, ch, chunk[w * h..w * h + cw * ch].to_vec())?;
            let cr = Plane::new(cw, ch, chunk[w * h + cw * ch..].to_vec())?;
            bt709_to_rgb(&y, &cb, &cr)
        })
        .collect()
}

fn load_rgb_dir(spec: &SequenceSpec, n: usize) -> Result<Vec<Frame>> {
    let mut files: Vec<PathBuf> = fs::read_dir(&spec.source)
        .map_err(|source| Error::FrameIo {
            path: spec.source.clone(),
            frame: 0,
            source,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    (0..n)
        .map(|i| {
            let path = files.get(i).ok_or_else(|| Error::Truncated {
                path: spec.source.clone(),
                frame: i,
            })?;
            let img = image::open(path)
                .map_err(|e| Error::Image {
                    path: path.clone(),
                    message: e.to_string(),
                })?
                .to_rgb8();
            let (w, h) = (img.width() as usize, img.height() as usize);
            if w != spec.width || h != spec.height {
                return Err(Error::dim(format!(
                    "frame {i} ({}) is {w}x{h}, sequence declares {}x{}",
                    path.display(),
                    spec.width,
                    spec.height
                )));
            }
            Frame::from_rgb8(h, w, img.as_raw())
        })
        .collect()
}

/// Writes raw 4:2:0 frames (used to build test sequences).
pub fn write_yuv420(path: &Path, frames: &[(Plane, Plane, Plane)]) -> Result<()> {
    let mut out = Vec::new();
    for (y, cb, cr) in frames {
        out.extend_from_slice(&y.data);
        out.extend_from_slice(&cb.data);
        out.extend_from_slice(&cr.data);
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes the display region of a frame as an 8-bit PNG.
pub fn save_png(frame: &Frame, path: &Path) -> Result<()> {
    let d = frame.crop_to_display();
    let img = image::RgbImage::from_raw(d.width() as u32, d.height() as u32, d.to_rgb8())
        .ok_or_else(|| Error::dim("image buffer size mismatch"))?;
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gradient_frame(h: usize, w: usize) -> Frame {
        let p = h * w;
        let mut data = vec![0.0f32; 3 * p];
        for c in 0..3 {
            for i in 0..p {
                data[c * p + i] = ((i * (c + 1)) % 251) as f32 / 250.0;
            }
        }
        Frame::new(h, w, data).unwrap()
    }

    #[test]
    fn white_and_black_points() {
        let (w, h) = (16, 16);
        let c = Plane::filled(8, 8, 128);
        let white = bt709_to_rgb(&Plane::filled(w, h, 235), &c, &c).unwrap();
        assert!(white.data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
        let black = bt709_to_rgb(&Plane::filled(w, h, 16), &c, &c).unwrap();
        assert!(black.data().iter().all(|&v| v.abs() < 1e-6));
    }

    #[test]
    fn mid_gray() {
        let c = Plane::filled(8, 8, 128);
        let f = bt709_to_rgb(&Plane::filled(16, 16, 126), &c, &c).unwrap();
        // oracle: (126 - 16) / 219 with neutral chroma
        let expect = 110.0f32 / 219.0;
        assert!(f.data().iter().all(|&v| (v - expect).abs() < 1e-6));
        assert!((expect - 0.5023).abs() < 1e-4);
    }

    #[test]
    fn chroma_size_mismatch_is_rejected() {
        let y = Plane::filled(16, 16, 100);
        let bad = Plane::filled(16, 8, 128);
        let good = Plane::filled(8, 8, 128);
        assert!(matches!(bt709_to_rgb(&y, &bad, &good), Err(Error::Dimension(_))));
    }

    #[test]
    fn inverse_matrix_recovers_luma() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..2000 {
            let rgb = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
            let ycc = rgb_to_bt709_pixel(rgb);
            let back = bt709_pixel_to_rgb(ycc[0], ycc[1], ycc[2]);
            let again = rgb_to_bt709_pixel(back);
            assert!((again[0] - ycc[0]).abs() / 255.0 < 1.0 / 255.0);
            for c in 0..3 {
                assert!((back[c] - rgb[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pad_hd_and_identity() {
        // 1080p-shaped frame scaled down keeps the same arithmetic: 1080 -> 1088
        let f = gradient_frame(1080, 32);
        let p = pad_to_multiple16(&f);
        assert_eq!((p.height(), p.width()), (1088, 32));
        assert_eq!((p.display_height(), p.display_width()), (1080, 32));
        let sq = gradient_frame(256, 256);
        assert_eq!(pad_to_multiple16(&sq), sq);
    }

    #[test]
    fn pad_then_crop_is_identity_and_pad_is_idempotent() {
        let f = gradient_frame(37, 50);
        let p = pad_to_multiple16(&f);
        assert_eq!((p.height(), p.width()), (48, 64));
        assert_eq!(p.crop_to_display(), f);
        assert_eq!(pad_to_multiple16(&p), p);
        // replicate padding: last column repeated
        assert_eq!(p.at(1, 10, 63), f.at(1, 10, 49));
        assert_eq!(p.at(2, 47, 5), f.at(2, 36, 5));
    }

    #[test]
    fn random_patch_is_aligned_and_deterministic() {
        let clip: Vec<Frame> = (0..3).map(|_| gradient_frame(256, 448)).collect();
        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut b = ChaCha8Rng::seed_from_u64(9);
        let pa = crop_random_patch(&clip, 256, &mut a).unwrap();
        let pb = crop_random_patch(&clip, 256, &mut b).unwrap();
        assert_eq!(pa, pb);
        assert_eq!((pa[0].height(), pa[0].width()), (256, 256));
        assert!(pa.windows(2).all(|w| w[0] == w[1]));
        let full = crop_random_patch(&clip[..1], 256, &mut a).unwrap();
        assert_eq!(full[0].height(), 256);
        let same = crop_random_patch(&[gradient_frame(32, 32)], 32, &mut a).unwrap();
        assert_eq!(same[0], gradient_frame(32, 32));
        assert!(matches!(crop_random_patch(&clip, 300, &mut a), Err(Error::Dimension(_))));
    }

    #[test]
    fn yuv_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seq.yuv");
        let frames: Vec<_> = (0..3u8)
            .map(|i| {
                (
                    Plane::filled(16, 16, 100 + i),
                    Plane::filled(8, 8, 128),
                    Plane::filled(8, 8, 128),
                )
            })
            .collect();
        write_yuv420(&path, &frames).unwrap();
        let spec = SequenceSpec {
            source: path.clone(),
            format: PixelFormat::Yuv420p,
            width: 16,
            height: 16,
            frames: 3,
        };
        let loaded = load_sequence(&spec, 3).unwrap();
        assert_eq!(loaded.len(), 3);
        let expect = (102.0f32 - 16.0) / 219.0;
        assert!((loaded[2].at(0, 3, 3) - expect).abs() < 1e-6);

        let lying = SequenceSpec { frames: 5, ..spec.clone() };
        match load_sequence(&lying, 4) {
            Err(Error::Truncated { frame, .. }) => assert_eq!(frame, 3),
            other => panic!("expected truncation error, got {other:?}"),
        }
        assert!(load_sequence(&spec, 4).is_err());
    }

    #[test]
    fn rgb_directory_identity_scaling() {
        let dir = tempfile::tempdir().unwrap();
        let mut raw = vec![0u8; 16 * 16 * 3];
        for (i, v) in raw.iter_mut().enumerate() {
            *v = (i % 256) as u8;
        }
        image::RgbImage::from_raw(16, 16, raw.clone())
            .unwrap()
            .save(dir.path().join("000.png"))
            .unwrap();
        let spec = SequenceSpec {
            source: dir.path().to_path_buf(),
            format: PixelFormat::Rgb8,
            width: 16,
            height: 16,
            frames: 1,
        };
        let f = &load_sequence(&spec, 1).unwrap()[0];
        assert_eq!(f.at(1, 0, 0), raw[1] as f32 / 255.0);
        assert_eq!(f.to_rgb8(), raw);
    }

    #[test]
    fn unknown_format_tag() {
        assert!(matches!("yuv444".parse::<PixelFormat>(), Err(Error::Config(_))));
    }
}
