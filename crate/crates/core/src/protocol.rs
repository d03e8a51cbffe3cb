//! Test protocol: code each sequence per rate point with periodic intra
//! frames, verify by decoding the container, and report container rates
//! and display-region quality.

use std::fmt::Write as _;
use std::path::Path;

use crate::bitstream::{bpp_of, read_sequence, write_sequence};
use crate::codec::{decode_sequence, encode_sequence};
use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::metrics::{msssim, psnr, MSSSIM_MIN_SIDE};
use crate::model::Model;

pub const CSV_HEADER: &str = "sequence,lambda,bpp,psnr_db,msssim,frames,intra_period";

/// Indices coded as I-frames.
pub fn intra_indices(frames: usize, intra_period: usize) -> Vec<usize> {
    (0..frames).step_by(intra_period.max(1)).collect()
}

/// One rate point of one sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct RdPoint {
    pub sequence: String,
    pub lambda_index: u8,
    pub lambda: f64,
    pub bpp: f64,
    pub psnr: f64,
    /// Absent when the display size is below the MS-SSIM minimum.
    pub msssim: Option<f64>,
    pub frames: usize,
    pub intra_period: usize,
}

/// Per-frame breakdown taken from the container.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameRow {
    pub sequence: String,
    pub lambda_index: u8,
    pub frame: usize,
    pub intra: bool,
    pub record_bytes: usize,
    /// Payload bits of the two motion segments.
    pub motion_bits: usize,
    /// Payload bits of the two context segments (the raw payload for I-frames).
    pub context_bits: usize,
    /// Shannon estimate from the quantised tables (P-frames).
    pub estimate_bits: Option<f64>,
    pub psnr: f64,
}

#[derive(Clone, Debug, Default)]
pub struct ProtocolReport {
    pub points: Vec<RdPoint>,
    pub rows: Vec<FrameRow>,
}

/// A trained model for one rate point.
pub struct RatePoint<'a> {
    pub lambda_index: u8,
    pub lambda: f64,
    pub model: &'a Model,
}

/// Codes the first `frames` frames of every sequence at every rate point.
/// A decoded frame that differs from the encoder's reconstruction is a
/// verification error.
pub fn run_test_protocol(
    sequences: &[(String, Vec<Frame>)],
    rates: &[RatePoint<'_>],
    frames: usize,
    intra_period: usize,
) -> Result<ProtocolReport> {
    let mut report = ProtocolReport::default();
    for (name, seq) in sequences {
        if seq.len() < frames {
            return Err(Error::Contract(format!(
                "sequence {name} has {} frames, protocol needs {frames}",
                seq.len()
            )));
        }
        let seq = &seq[..frames];
        for rp in rates {
            let enc = encode_sequence(rp.model, seq, intra_period, rp.lambda_index)?;
            let bytes = write_sequence(&enc.bitstream)?;
            let stream = read_sequence(&bytes)?;
            let decoded = decode_sequence(rp.model, &stream)?;
            verify(&enc.reconstructions, &decoded)?;
            let h = &stream.header;
            let pixels = h.display_width as f64 * h.display_height as f64 * frames as f64;
            let bpp = bytes.len() as f64 * 8.0 / pixels;
            debug_assert_eq!(bpp, bpp_of(&stream));
            let psnrs = seq
                .iter()
                .zip(&decoded)
                .map(|(a, b)| psnr(a, b))
                .collect::<Result<Vec<f64>>>()?;
            let ms = if (h.display_width as usize).min(h.display_height as usize) >= MSSSIM_MIN_SIDE {
                let v = seq
                    .iter()
                    .zip(&decoded)
                    .map(|(a, b)| msssim(a, b))
                    .collect::<Result<Vec<f64>>>()?;
                Some(v.iter().sum::<f64>() / v.len() as f64)
            } else {
                None
            };
            for (i, st) in enc.stats.iter().enumerate() {
                let seg = &st.segment_bytes;
                let (motion, context) = if st.intra { (0, seg[0]) } else { (seg[0] + seg[1], seg[2] + seg[3]) };
                report.rows.push(FrameRow {
                    sequence: name.clone(),
                    lambda_index: rp.lambda_index,
                    frame: i,
                    intra: st.intra,
                    record_bytes: st.record_bytes,
                    motion_bits: 8 * motion,
                    context_bits: 8 * context,
                    estimate_bits: st.estimate.map(|e| e.total()),
                    psnr: psnrs[i],
                });
            }
            report.points.push(RdPoint {
                sequence: name.clone(),
                lambda_index: rp.lambda_index,
                lambda: rp.lambda,
                bpp,
                psnr: psnrs.iter().sum::<f64>() / psnrs.len() as f64,
                msssim: ms,
                frames,
                intra_period,
            });
        }
    }
    Ok(report)
}

/// Bit-exact comparison of encoder and decoder reconstructions.
pub fn verify(encoder: &[Frame], decoder: &[Frame]) -> Result<()> {
    if encoder.len() != decoder.len() {
        return Err(Error::Verification {
            frame: encoder.len().min(decoder.len()),
            message: format!("encoder produced {} frames, decoder {}", encoder.len(), decoder.len()),
        });
    }
    for (i, (a, b)) in encoder.iter().zip(decoder).enumerate() {
        if a.data() != b.data() {
            let diff = a.data().iter().zip(b.data()).filter(|(x, y)| x != y).count();
            return Err(Error::Verification {
                frame: i,
                message: format!("{diff} samples differ from the encoder reconstruction"),
            });
        }
    }
    Ok(())
}

pub fn csv(points: &[RdPoint]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for p in points {
        let ms = p.msssim.map(|v| format!("{v:.6}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{:.6},{:.4},{},{},{}",
            p.sequence, p.lambda, p.bpp, p.psnr, ms, p.frames, p.intra_period
        );
    }
    s
}

pub fn write_csv(path: &Path, points: &[RdPoint]) -> Result<()> {
    std::fs::write(path, csv(points))?;
    Ok(())
}

/// Plain-text summary with the per-frame rate breakdown.
pub fn summary(report: &ProtocolReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# PSNR: per-frame values on the display region, averaged per sequence");
    let _ = writeln!(s, "# bpp: container bytes x 8 / (display pixels x frames)");
    for p in &report.points {
        let ms = p.msssim.map(|v| format!("{v:.5}")).unwrap_or_else(|| "n/a".into());
        let _ = writeln!(
            s,
            "{} lambda={} bpp={:.5} psnr={:.3} dB msssim={} frames={} intra_period={}",
            p.sequence, p.lambda, p.bpp, p.psnr, ms, p.frames, p.intra_period
        );
    }
    let _ = writeln!(s, "\nsequence,lambda_index,frame,type,record_bytes,motion_bits,context_bits,estimate_bits,psnr_db");
    for r in &report.rows {
        let est = r.estimate_bits.map(|e| format!("{e:.1}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{:.3}",
            r.sequence,
            r.lambda_index,
            r.frame,
            if r.intra { "I" } else { "P" },
            r.record_bytes,
            r.motion_bits,
            r.context_bits,
            est,
            r.psnr
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intra_positions() {
        let i = intra_indices(96, 32);
        assert_eq!(i, vec![0, 32, 64]);
        assert_eq!(96 - i.len(), 93);
        assert_eq!(intra_indices(33, 32), vec![0, 32]);
    }

    #[test]
    fn csv_has_schema_header_and_blank_msssim() {
        let p = RdPoint {
            sequence: "s".into(),
            lambda_index: 3,
            lambda: 840.0,
            bpp: 0.5,
            psnr: 30.0,
            msssim: None,
            frames: 2,
            intra_period: 32,
        };
        let text = csv(&[p]);
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(CSV_HEADER));
        assert_eq!(lines.next(), Some("s,840,0.500000,30.0000,,2,32"));
    }
}
