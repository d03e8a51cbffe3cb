//! Real coding: latents to symbols, symbols to rANS streams, and whole
//! sequences to containers and back.
//!
//! Every reconstruction on the encoder side is produced by the same decode
//! functions the decoder runs, fed with the same integer symbols, so the two
//! sides agree bit for bit.

use std::collections::HashMap;

use ltvc_tensor::{ParamVars, Tensor, Var};
use sha2::{Digest, Sha256};

use crate::bitstream::{Bitstream, FrameRecord, Header};
use crate::entropy::{build_cdf, rans, CdfTable, RateEstimate};
use crate::error::{Error, Result};
use crate::frame::{pad_to_multiple16, Frame};
use crate::latent::{to_symbols, LatentCode, LatentKind};
use crate::mining::Pyramid;
use crate::model::{Model, ReconstructionBuffer};

/// Hyper-latent spatial size for a latent of side `n` (one stride-1 and two
/// stride-2 convolutions).
pub fn hyper_side(n: usize) -> usize {
    n.div_ceil(2).div_ceil(2)
}

/// Coded P-frame: the four streams, their Shannon estimates from the
/// quantised tables, and the shared reconstruction.
pub struct InterFrame {
    pub segments: [Vec<u8>; 4],
    pub estimate: RateEstimate,
    pub codes: [LatentCode; 4],
    pub x_hat: Var<f32>,
    pub feature: Var<f32>,
}

/// Bound model ready for coding.
pub struct Codec<'a> {
    pub model: &'a Model,
    p: ParamVars<f32>,
    motion_hyper_tables: Vec<CdfTable>,
    context_hyper_tables: Vec<CdfTable>,
}

/// Per-element tables for Gaussian latents, deduplicated by scale.
fn gaussian_tables(sigma: &Tensor<f32>) -> (Vec<usize>, Vec<CdfTable>) {
    let mut index: HashMap<u32, usize> = HashMap::new();
    let mut tables = Vec::new();
    let contexts = sigma
        .data()
        .iter()
        .map(|&s| {
            *index.entry(s.to_bits()).or_insert_with(|| {
                tables.push(build_cdf(0.0, s as f64));
                tables.len() - 1
            })
        })
        .collect();
    (contexts, tables)
}

fn channel_contexts(shape: [usize; 3]) -> Vec<usize> {
    let [c, h, w] = shape;
    (0..c).flat_map(|ch| std::iter::repeat_n(ch, h * w)).collect()
}

fn estimate_bits(symbols: &[i32], contexts: &[usize], tables: &[CdfTable]) -> f64 {
    symbols
        .iter()
        .zip(contexts)
        .map(|(&s, &c)| tables[c].bits(s).unwrap_or(f64::INFINITY))
        .sum()
}

fn code_of(kind: LatentKind, v: &Tensor<f32>) -> Result<LatentCode> {
    let [_, c, h, w] = v.shape();
    LatentCode::new(kind, [c, h, w], to_symbols(v))
}

fn expect_shape(code: &LatentCode, shape: [usize; 3]) -> Result<()> {
    if code.shape != shape {
        return Err(Error::corrupt(
            None,
            format!("{:?} latent is {:?}, expected {:?}", code.kind, code.shape, shape),
        ));
    }
    Ok(())
}

impl<'a> Codec<'a> {
    pub fn new(model: &'a Model) -> Self {
        Codec {
            p: model.constants(),
            motion_hyper_tables: model.nets.motion.hyper.prior.tables(&model.params),
            context_hyper_tables: model.nets.context.hyper.prior.tables(&model.params),
            model,
        }
    }

    pub fn params(&self) -> &ParamVars<f32> {
        &self.p
    }

    /// Quantised motion latent and hyper-latent of a full-resolution flow.
    pub fn encode_motion(&self, v: &Var<f32>) -> Result<(LatentCode, LatentCode)> {
        let nets = &self.model.nets;
        let [_, c, h, w] = v.shape();
        if c != 2 || h % 16 != 0 || w % 16 != 0 {
            return Err(Error::dim(format!("flow {:?} is not a padded 2-channel field", v.shape())));
        }
        let m = nets.motion.analyze(&self.p, v);
        let zm = code_of(LatentKind::MotionHyper, nets.motion.hyper.analyze(&self.p, &m).value())?;
        let (mu, _) = self.motion_prior(&zm, h / 16, w / 16)?;
        let m = code_of(LatentKind::Motion, m.sub(&mu).value())?;
        Ok((m, zm))
    }

    /// `(mu, sigma)` of the motion latent at `h x w` from its hyper-latent.
    pub fn motion_prior(&self, zm: &LatentCode, h: usize, w: usize) -> Result<(Var<f32>, Var<f32>)> {
        let nets = &self.model.nets;
        expect_shape(zm, [nets.config.hyper, hyper_side(h), hyper_side(w)])?;
        let feat = nets.motion.hyper.synthesize(&self.p, &Var::constant(zm.to_tensor()), h, w);
        Ok(crate::latent::split_mean_scale(&feat))
    }

    pub fn decode_motion(&self, m: &LatentCode, zm: &LatentCode) -> Result<Var<f32>> {
        m.expect_channels(self.model.nets.motion.latent_channels)?;
        let [_, h, w] = m.shape;
        let (mu, _) = self.motion_prior(zm, h, w)?;
        let m_hat = Var::constant(m.to_tensor()).add(&mu);
        Ok(self.model.nets.motion.synthesize(&self.p, &m_hat))
    }

    /// Quantised context latent and hyper-latent of `x` given the contexts.
    pub fn encode_frame(&self, x: &Var<f32>, ctx: &Pyramid<f32>) -> Result<(LatentCode, LatentCode)> {
        let cc = &self.model.nets.context;
        let y = cc.analyze(&self.p, x, ctx)?;
        let zy = code_of(LatentKind::ContextHyper, cc.hyper.analyze(&self.p, &y).value())?;
        let (mu, _) = self.context_prior(&zy, ctx)?;
        let y = code_of(LatentKind::Context, y.sub(&mu).value())?;
        Ok((y, zy))
    }

    /// `(mu, sigma)` of the context latent from its hyper-latent and `C^3`.
    pub fn context_prior(&self, zy: &LatentCode, ctx: &Pyramid<f32>) -> Result<(Var<f32>, Var<f32>)> {
        let [_, _, h3, w3] = ctx[2].shape();
        let (h, w) = (h3 / 4, w3 / 4);
        expect_shape(zy, [self.model.nets.config.hyper, hyper_side(h), hyper_side(w)])?;
        Ok(self.model.nets.context.prior(&self.p, &Var::constant(zy.to_tensor()), ctx))
    }

    /// `(x_hat, F)`; depends only on the symbols, the contexts and the weights.
    pub fn decode_frame(&self, y: &LatentCode, zy: &LatentCode, ctx: &Pyramid<f32>) -> Result<(Var<f32>, Var<f32>)> {
        y.expect_channels(self.model.nets.context.latent_channels)?;
        let [_, _, h3, w3] = ctx[2].shape();
        expect_shape(y, [self.model.nets.context.latent_channels, h3 / 4, w3 / 4])?;
        let (mu, _) = self.context_prior(zy, ctx)?;
        let y_hat = Var::constant(y.to_tensor()).add(&mu);
        self.model.nets.context.synthesize(&self.p, &y_hat, ctx)
    }

    fn hyper_tables(&self, kind: LatentKind) -> &[CdfTable] {
        match kind {
            LatentKind::MotionHyper => &self.motion_hyper_tables,
            _ => &self.context_hyper_tables,
        }
    }

    /// Stream and estimate (bits) for a hyper-latent.
    fn code_hyper(&self, code: &LatentCode) -> Result<(Vec<u8>, f64)> {
        let ctx = channel_contexts(code.shape);
        let tables = self.hyper_tables(code.kind);
        Ok((rans::encode(&code.symbols, &ctx, tables)?, estimate_bits(&code.symbols, &ctx, tables)))
    }

    fn decode_hyper(&self, kind: LatentKind, bytes: &[u8], shape: [usize; 3]) -> Result<LatentCode> {
        let symbols = rans::decode(bytes, &channel_contexts(shape), self.hyper_tables(kind))?;
        LatentCode::new(kind, shape, symbols)
    }

    fn code_gaussian(code: &LatentCode, sigma: &Var<f32>) -> Result<(Vec<u8>, f64)> {
        let (ctx, tables) = gaussian_tables(sigma.value());
        Ok((rans::encode(&code.symbols, &ctx, &tables)?, estimate_bits(&code.symbols, &ctx, &tables)))
    }

    fn decode_gaussian(kind: LatentKind, bytes: &[u8], sigma: &Var<f32>) -> Result<LatentCode> {
        let [_, c, h, w] = sigma.shape();
        let (ctx, tables) = gaussian_tables(sigma.value());
        LatentCode::new(kind, [c, h, w], rans::decode(bytes, &ctx, &tables)?)
    }

    /// Codes one P-frame against `buf`.
    pub fn encode_p_frame(&self, x: &Var<f32>, buf: &ReconstructionBuffer<f32>) -> Result<InterFrame> {
        let nets = &self.model.nets;
        let [_, _, h, w] = x.shape();
        let v = nets.flow.forward(&self.p, x, &buf.x_hat)?;
        let (m, zm) = self.encode_motion(&v)?;
        let (_, sigma_m) = self.motion_prior(&zm, h / 16, w / 16)?;
        let (s0, e0) = self.code_hyper(&zm)?;
        let (s1, e1) = Self::code_gaussian(&m, &sigma_m)?;
        let v_hat = self.decode_motion(&m, &zm)?;
        let ctx = nets.contexts(&self.p, buf, &v_hat)?;
        let (y, zy) = self.encode_frame(x, &ctx)?;
        let (_, sigma) = self.context_prior(&zy, &ctx)?;
        let (s2, e2) = self.code_hyper(&zy)?;
        let (s3, e3) = Self::code_gaussian(&y, &sigma)?;
        let (x_hat, feature) = self.decode_frame(&y, &zy, &ctx)?;
        Ok(InterFrame {
            segments: [s0, s1, s2, s3],
            estimate: RateEstimate {
                motion_hyper: e0,
                motion: e1,
                context_hyper: e2,
                context: e3,
            },
            codes: [zm, m, zy, y],
            x_hat,
            feature,
        })
    }

    /// Decodes one P-frame record against `buf`; returns `(x_hat, F)`.
    pub fn decode_p_frame(&self, segments: &[Vec<u8>; 4], buf: &ReconstructionBuffer<f32>) -> Result<(Var<f32>, Var<f32>)> {
        let nets = &self.model.nets;
        let c = &nets.config;
        let (h, w) = (buf.height() / 16, buf.width() / 16);
        let zm = self.decode_hyper(LatentKind::MotionHyper, &segments[0], [c.hyper, hyper_side(h), hyper_side(w)])?;
        let (_, sigma_m) = self.motion_prior(&zm, h, w)?;
        let m = Self::decode_gaussian(LatentKind::Motion, &segments[1], &sigma_m)?;
        let v_hat = self.decode_motion(&m, &zm)?;
        let ctx = nets.contexts(&self.p, buf, &v_hat)?;
        let zy = self.decode_hyper(LatentKind::ContextHyper, &segments[2], [c.hyper, hyper_side(h), hyper_side(w)])?;
        let (_, sigma) = self.context_prior(&zy, &ctx)?;
        let y = Self::decode_gaussian(LatentKind::Context, &segments[3], &sigma)?;
        self.decode_frame(&y, &zy, &ctx)
    }

    /// Buffer after an intra reconstruction.
    pub fn start_gop(&self, x_hat: &Var<f32>) -> Result<ReconstructionBuffer<f32>> {
        self.model.nets.start_gop(&self.p, x_hat)
    }

    pub fn update_buffer(
        &self,
        buf: &ReconstructionBuffer<f32>,
        x_hat: &Var<f32>,
        feature: &Var<f32>,
    ) -> Result<ReconstructionBuffer<f32>> {
        self.model.nets.update_buffer(&self.p, buf, x_hat, feature)
    }
}

/// Statistics of one coded frame.
#[derive(Clone, Debug)]
pub struct FrameStats {
    pub intra: bool,
    /// Record bytes including type byte and length prefixes.
    pub record_bytes: usize,
    /// Payload bytes per segment (one for I-frames, four for P-frames).
    pub segment_bytes: Vec<usize>,
    /// Shannon estimate from the quantised tables (P-frames).
    pub estimate: Option<RateEstimate>,
    /// Hash of the padded reconstruction's samples.
    pub hash: String,
}

pub struct EncodedSequence {
    pub bitstream: Bitstream,
    /// Padded reconstructions with display sizes set.
    pub reconstructions: Vec<Frame>,
    pub stats: Vec<FrameStats>,
}

/// SHA-256 over the little-endian `f32` samples.
pub fn frame_hash(f: &Frame) -> String {
    let mut h = Sha256::new();
    for v in f.data() {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn to_frame(x_hat: &Var<f32>, display: (usize, usize)) -> Result<Frame> {
    Frame::from_tensor_clamped(x_hat.value(), display.0, display.1)
}

/// Lossless intra: the padded frame as RGB24.
fn intra_reconstruction(padded: &Frame) -> Result<(Vec<u8>, Frame)> {
    let rgb = padded.to_rgb8();
    let mut rec = Frame::from_rgb8(padded.height(), padded.width(), &rgb)?;
    rec.set_display(padded.display_height(), padded.display_width())?;
    Ok((rgb, rec))
}

fn check_u16(v: usize, what: &str) -> Result<u16> {
    u16::try_from(v).map_err(|_| Error::Config(format!("{what} {v} does not fit the container")))
}

/// Codes `frames` (display size, all alike) with an I-frame every
/// `intra_period` frames and the chain reset at each.
pub fn encode_sequence(model: &Model, frames: &[Frame], intra_period: usize, lambda_index: u8) -> Result<EncodedSequence> {
    if frames.is_empty() {
        return Err(Error::Contract("cannot encode an empty sequence".into()));
    }
    if intra_period == 0 {
        return Err(Error::Config("intra period must be at least 1".into()));
    }
    let (dh, dw) = (frames[0].display_height(), frames[0].display_width());
    if frames.iter().any(|f| (f.display_height(), f.display_width()) != (dh, dw)) {
        return Err(Error::dim("all frames of a sequence must share dimensions"));
    }
    let codec = Codec::new(model);
    let mut records = Vec::with_capacity(frames.len());
    let mut recs = Vec::with_capacity(frames.len());
    let mut stats = Vec::with_capacity(frames.len());
    let mut buf: Option<ReconstructionBuffer<f32>> = None;
    let mut padded_dims = (0, 0);
    for (i, f) in frames.iter().enumerate() {
        let padded = pad_to_multiple16(f);
        padded_dims = (padded.height(), padded.width());
        let (record, rec, estimate) = match (&buf, i % intra_period == 0) {
            (Some(b), false) => {
                let out = codec.encode_p_frame(&padded.to_var(), b)?;
                buf = Some(codec.update_buffer(b, &out.x_hat, &out.feature)?);
                (FrameRecord::Inter(out.segments), to_frame(&out.x_hat, (dh, dw))?, Some(out.estimate))
            }
            _ => {
                let (rgb, rec) = intra_reconstruction(&padded)?;
                buf = Some(codec.start_gop(&rec.to_var())?);
                (FrameRecord::Intra(rgb), rec, None)
            }
        };
        let segment_bytes = match &record {
            FrameRecord::Intra(b) => vec![b.len()],
            FrameRecord::Inter(s) => s.iter().map(Vec::len).collect(),
        };
        stats.push(FrameStats {
            intra: record.is_intra(),
            record_bytes: record.byte_len(),
            segment_bytes,
            estimate,
            hash: frame_hash(&rec),
        });
        records.push(record);
        recs.push(rec);
    }
    let header = Header {
        width: check_u16(padded_dims.1, "width")?,
        height: check_u16(padded_dims.0, "height")?,
        display_width: check_u16(dw, "display width")?,
        display_height: check_u16(dh, "display height")?,
        frame_count: check_u16(frames.len(), "frame count")?,
        lambda_index,
    };
    Ok(EncodedSequence {
        bitstream: Bitstream { header, records },
        reconstructions: recs,
        stats,
    })
}

/// Rebuilds every reconstruction from the container alone.
pub fn decode_sequence(model: &Model, stream: &Bitstream) -> Result<Vec<Frame>> {
    let h = &stream.header;
    let (ph, pw) = (h.height as usize, h.width as usize);
    let (dh, dw) = (h.display_height as usize, h.display_width as usize);
    if ph % 16 != 0 || pw % 16 != 0 || ph < dh || pw < dw || dh < 16 || dw < 16 {
        return Err(Error::Format(format!("invalid dimensions {pw}x{ph} (display {dw}x{dh})")));
    }
    let codec = Codec::new(model);
    let mut out = Vec::with_capacity(stream.records.len());
    let mut buf: Option<ReconstructionBuffer<f32>> = None;
    for (i, record) in stream.records.iter().enumerate() {
        let rec = match record {
            FrameRecord::Intra(rgb) => {
                if rgb.len() != 3 * ph * pw {
                    return Err(Error::corrupt(
                        Some(i),
                        format!("intra payload is {} bytes, expected {}", rgb.len(), 3 * ph * pw),
                    ));
                }
                let mut rec = Frame::from_rgb8(ph, pw, rgb).map_err(|e| e.at_frame(i))?;
                rec.set_display(dh, dw)?;
                buf = Some(codec.start_gop(&rec.to_var())?);
                rec
            }
            FrameRecord::Inter(segments) => {
                let b = buf
                    .as_ref()
                    .ok_or_else(|| Error::corrupt(Some(i), "P-frame before any I-frame"))?;
                let (x_hat, feature) = codec.decode_p_frame(segments, b).map_err(|e| e.at_frame(i))?;
                buf = Some(codec.update_buffer(b, &x_hat, &feature)?);
                to_frame(&x_hat, (dh, dw))?
            }
        };
        out.push(rec);
    }
    Ok(out)
}

/// Fused context pyramid the encoder uses for P-frame `index`, with the
/// preceding frames coded as in `encode_sequence`.
pub fn contexts_at(model: &Model, frames: &[Frame], index: usize, intra_period: usize) -> Result<Pyramid<f32>> {
    if index >= frames.len() {
        return Err(Error::Contract(format!("frame {index} is outside a {}-frame sequence", frames.len())));
    }
    if intra_period == 0 || index % intra_period == 0 {
        return Err(Error::Contract(format!("frame {index} is an I-frame and has no context")));
    }
    let codec = Codec::new(model);
    let start = index - index % intra_period;
    let mut buf = codec.start_gop(&intra_reconstruction(&pad_to_multiple16(&frames[start]))?.1.to_var())?;
    for f in &frames[start + 1..index] {
        let out = codec.encode_p_frame(&pad_to_multiple16(f).to_var(), &buf)?;
        buf = codec.update_buffer(&buf, &out.x_hat, &out.feature)?;
    }
    let x = pad_to_multiple16(&frames[index]).to_var();
    let v = model.nets.flow.forward(&codec.p, &x, &buf.x_hat)?;
    let (m, zm) = codec.encode_motion(&v)?;
    let v_hat = codec.decode_motion(&m, &zm)?;
    model.nets.contexts(&codec.p, &buf, &v_hat)
}
