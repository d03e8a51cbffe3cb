mod common;

use common::{random_tensor, rng};
use ltvc_core::bitstream::{read_sequence, write_sequence, Bitstream, FrameRecord, Header, HEADER_BYTES};
use ltvc_core::entropy::cdf::table_from_pmf;
use ltvc_core::entropy::rans;
use ltvc_core::entropy::{CdfTable, SYMBOL_MAX, SYMBOL_MIN};
use ltvc_core::heatmap::context_heatmap;
use ltvc_core::metrics::{msssim, psnr, MSSSIM_WEIGHTS};
use ltvc_core::mining::warp_bilinear;
use ltvc_core::Frame;
use ltvc_tensor::{Tensor, Var};
use proptest::prelude::*;
use rand::Rng;

fn arb_record() -> impl Strategy<Value = FrameRecord> {
    prop_oneof![
        prop::collection::vec(any::<u8>(), 0..64).prop_map(FrameRecord::Intra),
        [
            prop::collection::vec(any::<u8>(), 0..24),
            prop::collection::vec(any::<u8>(), 0..24),
            prop::collection::vec(any::<u8>(), 0..24),
            prop::collection::vec(any::<u8>(), 0..24),
        ]
        .prop_map(FrameRecord::Inter),
    ]
}

fn arb_stream() -> impl Strategy<Value = Bitstream> {
    (1u16..40, 1u16..40, 0u16..16, 0u16..16, 0u8..4, prop::collection::vec(arb_record(), 0..6)).prop_map(
        |(bw, bh, cw, ch, lambda_index, records)| {
            let (width, height) = (16 * bw, 16 * bh);
            Bitstream {
                header: Header {
                    width,
                    height,
                    display_width: width - cw.min(width - 1),
                    display_height: height - ch.min(height - 1),
                    frame_count: records.len() as u16,
                    lambda_index,
                },
                records,
            }
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn container_round_trips_and_rejects_prefixes(stream in arb_stream(), cut in any::<prop::sample::Index>()) {
        let bytes = write_sequence(&stream).unwrap();
        prop_assert_eq!(bytes.len(), HEADER_BYTES + stream.records.iter().map(FrameRecord::byte_len).sum::<usize>());
        prop_assert_eq!(bytes.len(), stream.byte_len());
        prop_assert_eq!(read_sequence(&bytes).unwrap(), stream);
        let n = cut.index(bytes.len());
        prop_assert!(read_sequence(&bytes[..n]).is_err());
    }

    #[test]
    fn rans_round_trip_and_flat_api_agree(
        seed in any::<u64>(),
        syms in prop::collection::vec(SYMBOL_MIN..=SYMBOL_MAX, 0..400),
    ) {
        let mut r = rng(seed);
        let n = (SYMBOL_MAX - SYMBOL_MIN + 1) as usize;
        let tables: Vec<CdfTable> = (0..3)
            .map(|_| table_from_pmf(&(0..n).map(|_| r.gen_range(0.0..1.0f64).powi(4)).collect::<Vec<_>>()))
            .collect();
        let ctx: Vec<usize> = (0..syms.len()).map(|_| r.gen_range(0..3)).collect();
        let bytes = rans::encode(&syms, &ctx, &tables).unwrap();
        prop_assert_eq!(&rans::decode(&bytes, &ctx, &tables).unwrap(), &syms);
        let flat = rans::flatten(&tables);
        let ctx32: Vec<u32> = ctx.iter().map(|&c| c as u32).collect();
        let fb = rans::encode_flat(&syms, &ctx32, &flat, n + 1, SYMBOL_MIN).unwrap();
        prop_assert_eq!(&fb, &bytes);
        prop_assert_eq!(rans::decode_flat(&fb, &ctx32, &flat, n + 1, SYMBOL_MIN).unwrap(), syms);
    }

    #[test]
    fn integer_flow_is_a_clamped_shift(seed in any::<u64>(), dx in -9i32..10, dy in -9i32..10) {
        let mut r = rng(seed);
        let (h, w) = (6usize, 7usize);
        let src = random_tensor(&mut r, [1, 2, h, w], 0.0, 1.0);
        let mut flow = Tensor::<f64>::zeros([1, 2, h, w]);
        flow.channel_mut(0, 0).fill(dx as f64);
        flow.channel_mut(0, 1).fill(dy as f64);
        let out = warp_bilinear(&Var::constant(src.clone()), &Var::constant(flow)).unwrap();
        for c in 0..2 {
            for y in 0..h {
                for x in 0..w {
                    let sy = (y as i32 + dy).clamp(0, h as i32 - 1) as usize;
                    let sx = (x as i32 + dx).clamp(0, w as i32 - 1) as usize;
                    prop_assert_eq!(out.value().at(0, c, y, x), src.at(0, c, sy, sx));
                }
            }
        }
    }

    #[test]
    fn heatmap_is_normalised_channel_mean(seed in any::<u64>(), c in 1usize..6, h in 1usize..9, w in 1usize..9) {
        let mut r = rng(seed);
        let t = random_tensor(&mut r, [1, c, h, w], -3.0, 3.0).cast::<f32>();
        let m = context_heatmap(&t, c).unwrap();
        prop_assert_eq!((m.height, m.width), (h, w));
        let mean: Vec<f64> = (0..h * w)
            .map(|i| (0..c).map(|ch| t.channel(0, ch)[i] as f64).sum::<f64>() / c as f64)
            .collect();
        let lo = mean.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = mean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (v, mu) in m.values.iter().zip(&mean) {
            let want = if hi > lo { (mu - lo) / (hi - lo) } else { 0.0 };
            prop_assert!((*v as f64 - want).abs() < 1e-5);
        }
    }

    #[test]
    fn psnr_is_symmetric(seed in any::<u64>()) {
        let (a, b) = (noise_frame(seed, 16, 20), noise_frame(seed ^ 1, 16, 20));
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }
}

fn noise_frame(seed: u64, h: usize, w: usize) -> Frame {
    let mut r = rng(seed);
    Frame::new(h, w, (0..3 * h * w).map(|_| r.gen_range(0.0..1.0f32)).collect()).unwrap()
}

/// Smooth content plus noise so every scale carries structure.
fn textured_frame(seed: u64, h: usize, w: usize) -> Frame {
    let mut r = rng(seed);
    let (fx, fy) = (r.gen_range(0.02..0.2), r.gen_range(0.02..0.2));
    let mut d = Vec::with_capacity(3 * h * w);
    for c in 0..3 {
        for y in 0..h {
            for x in 0..w {
                let s = 0.5 + 0.3 * ((x as f64 * fx + c as f64).sin() * (y as f64 * fy).cos());
                d.push((s + r.gen_range(-0.1..0.1)).clamp(0.0, 1.0) as f32);
            }
        }
    }
    Frame::new(h, w, d).unwrap()
}

/// Five-scale MS-SSIM with a direct 2-D Gaussian window, valid filtering,
/// and 2x2 mean pooling after dropping an odd last row/column. A scale
/// narrower than 11 px uses the widest odd window that fits.
fn msssim_oracle(a: &Frame, b: &Frame) -> f64 {
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    for ch in 0..3 {
        let (mut h, mut w) = (a.height(), a.width());
        let mut x: Vec<f64> = (0..h * w).map(|i| a.at(ch, i / w, i % w) as f64).collect();
        let mut y: Vec<f64> = (0..h * w).map(|i| b.at(ch, i / w, i % w) as f64).collect();
        let mut prod = 1.0;
        for (s, &wt) in MSSSIM_WEIGHTS.iter().enumerate() {
            let side = h.min(w);
            let size = if side >= 11 { 11 } else if side % 2 == 1 { side } else { side - 1 };
            let mid = (size / 2) as f64;
            let g: Vec<f64> = (0..size).map(|i| (-((i as f64 - mid).powi(2)) / (2.0 * 1.5 * 1.5)).exp()).collect();
            let gs: f64 = g.iter().sum::<f64>().powi(2);
            let (oh, ow) = (h + 1 - size, w + 1 - size);
            let (mut ssim_sum, mut cs_sum) = (0.0, 0.0);
            for i in 0..oh {
                for j in 0..ow {
                    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for u in 0..size {
                        for v in 0..size {
                            let k = g[u] * g[v] / gs;
                            let (p, q) = (x[(i + u) * w + j + v], y[(i + u) * w + j + v]);
                            mx += k * p;
                            my += k * q;
                            sxx += k * p * p;
                            syy += k * q * q;
                            sxy += k * p * q;
                        }
                    }
                    let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                    let cs = (2.0 * cov + c2) / (vx + vy + c2);
                    cs_sum += cs;
                    ssim_sum += cs * (2.0 * mx * my + c1) / (mx * mx + my * my + c1);
                }
            }
            let n = (oh * ow) as f64;
            let term = if s == 4 { ssim_sum / n } else { cs_sum / n };
            prod *= term.max(0.0).powf(wt);
            if s < 4 {
                let (nh, nw) = (h / 2, w / 2);
                let pool = |z: &[f64]| -> Vec<f64> {
                    (0..nh * nw)
                        .map(|k| {
                            let (r, c) = (2 * (k / nw), 2 * (k % nw));
                            (z[r * w + c] + z[r * w + c + 1] + z[(r + 1) * w + c] + z[(r + 1) * w + c + 1]) / 4.0
                        })
                        .collect()
                };
                x = pool(&x);
                y = pool(&y);
                h = nh;
                w = nw;
            }
        }
        total += prod;
    }
    total / 3.0
}

#[test]
fn msssim_matches_direct_oracle() {
    let a = textured_frame(1, 170, 163);
    let b = textured_frame(2, 170, 163);
    let got = msssim(&a, &b).unwrap();
    let want = msssim_oracle(&a, &b);
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
    let c = Frame::new(170, 163, a.data().iter().map(|v| (v + 0.05).min(1.0)).collect()).unwrap();
    let got = msssim(&a, &c).unwrap();
    let want = msssim_oracle(&a, &c);
    assert!((got - want).abs() < 1e-6, "{got} vs {want}");
}

#[test]
fn msssim_identity_symmetry_and_inversion() {
    let a = textured_frame(3, 160, 176);
    let b = textured_frame(4, 160, 176);
    assert!((msssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
    assert!((msssim(&a, &b).unwrap() - msssim(&b, &a).unwrap()).abs() < 1e-9);
    let inv = Frame::new(160, 176, a.data().iter().map(|v| 1.0 - v).collect()).unwrap();
    assert!(msssim(&a, &inv).unwrap() < 0.5);
    let small = textured_frame(5, 159, 200);
    let err = msssim(&small, &small).unwrap_err().to_string();
    assert!(err.contains("160"), "{err}");
}
