//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. The overfit smoke model is trained once and reused by the rate,
//! protocol and decodability checks.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::process::Command;
use std::time::{Duration, Instant};

use ltvc_core::bitstream::{read_sequence, write_sequence};
use ltvc_core::checkpoint::{self, CheckpointHeader, DistortionMode};
use ltvc_core::codec::{decode_sequence, encode_sequence};
use ltvc_core::metrics::psnr;
use ltvc_core::model::Model;
use ltvc_core::protocol::{run_test_protocol, verify, RatePoint};
use ltvc_core::synthetic::{moving_texture, Motion};
use ltvc_core::train::{
    default_schedule, evaluate_clip, frame_weight, ClipSampler, Stage, StageKind, Trainer, TrainingConfig,
    DEFAULT_WEIGHTS,
};
use ltvc_core::{Frame, ModelConfig, Variant};

const SMOKE_LAMBDA_INDEX: u8 = 3;

struct Outcome {
    failures: usize,
}

impl Outcome {
    fn record(&mut self, name: &str, pass: bool, detail: String, elapsed: Duration, limit: Duration) {
        let in_time = elapsed <= limit;
        let ok = pass && in_time;
        if !ok {
            self.failures += 1;
        }
        let time_note = if in_time { String::new() } else { format!(", over the {:.0} s limit", limit.as_secs_f64()) };
        println!(
            "{} {name}: {detail} [{:.1} s{time_note}]",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

struct Smoke {
    model: Model,
    elapsed: Duration,
}

fn main() {
    let mut out = Outcome { failures: 0 };

    let t = Instant::now();
    let r = common::warp_check(200, 101);
    out.record(
        "warp oracle",
        r.max_abs_error <= 1e-6 && r.zero_flow_exact,
        format!("max abs error {:.2e} over 200 instances, zero flow exact: {}", r.max_abs_error, r.zero_flow_exact),
        t.elapsed(),
        secs(10),
    );

    let t = Instant::now();
    let r = common::lstm_check(100, 102);
    out.record(
        "conv-lstm oracle",
        r.max_abs_error <= 1e-6 && r.forced_gate_exact,
        format!("max abs error {:.2e} over 100 parameterizations, forced gates exact: {}", r.max_abs_error, r.forced_gate_exact),
        t.elapsed(),
        secs(10),
    );

    let t = Instant::now();
    let gaps: Vec<f64> = (0..3).map(common::memory_gap).collect();
    let min_gap = gaps.iter().copied().fold(f64::INFINITY, f64::min);
    out.record(
        "long-term memory",
        min_gap > 1e-6,
        format!("smallest hidden-state gap {min_gap:.3e} over 3 seeds"),
        t.elapsed(),
        secs(10),
    );

    let t = Instant::now();
    let checks = common::gradient_checks(103);
    let worst = checks.iter().map(|g| g.max_rel_error).fold(0.0, f64::max);
    let live = checks.iter().all(|g| 2 * g.live_probes >= g.probes);
    let names: Vec<String> = checks.iter().map(|g| format!("{} {:.1e}", g.name, g.max_rel_error)).collect();
    out.record(
        "gradient checks",
        worst <= 1e-3 && live,
        names.join(", "),
        t.elapsed(),
        secs(300),
    );

    let t = Instant::now();
    let r = common::bd_rate_checks(200, 104);
    out.record(
        "bd-rate oracle",
        r.identical.abs() <= 1e-9 && (r.shifted + 10.0).abs() <= 0.01 && r.max_oracle_deviation <= 5e-4,
        format!(
            "identical {:.1e}, 0.9x rate {:.4} %, max oracle deviation {:.2e} %",
            r.identical,
            r.shifted,
            100.0 * r.max_oracle_deviation
        ),
        t.elapsed(),
        secs(10),
    );

    let t = Instant::now();
    let r = common::loss_arithmetic(105);
    let cycle: Vec<f64> = (0..4).map(|i| frame_weight(&DEFAULT_WEIGHTS, i)).collect();
    let cycle_ok = cycle == [0.5, 1.2, 0.5, 0.9] && frame_weight(&DEFAULT_WEIGHTS, 4) == 0.5;
    out.record(
        "loss arithmetic",
        r.rd_example_error <= 1e-6
            && r.identical_zero_rate == 0.0
            && r.clip_mean_error <= 1e-6
            && r.empty_clip_rejected
            && cycle_ok,
        format!(
            "rd example error {:.1e}, clip mean error {:.1e}, frame weights {cycle:?}",
            r.rd_example_error, r.clip_mean_error
        ),
        t.elapsed(),
        secs(1),
    );

    let t = Instant::now();
    let (ok, detail) = ablation();
    out.record("ablation toggles", ok, detail, t.elapsed(), secs(120));

    let smoke = overfit_smoke(&mut out);
    rate_and_protocol(&mut out, &smoke);
    decodability(&mut out, &smoke);

    println!(
        "{} criteria failed (smoke training took {:.0} s)",
        out.failures,
        smoke.elapsed.as_secs_f64()
    );
    if out.failures > 0 {
        std::process::exit(1);
    }
}

fn ablation() -> (bool, String) {
    let frames = moving_texture(2, 32, 32, Motion { dx: 1.0, dy: 0.5 }, 7).unwrap();
    let mut notes = Vec::new();
    let mut ok = true;
    for v in [Variant::Ma, Variant::Mb, Variant::Mc] {
        let result = (|| -> ltvc_core::Result<f64> {
            let model = Model::new(&ModelConfig::tiny().with_variant(v), 3)?;
            let mut trainer = Trainer::new(model, TrainingConfig::default())?;
            let stage = Stage {
                name: "one".into(),
                kind: StageKind::Full,
                p_frames: 1,
                steps: 1,
                learning_rate: 1e-3,
            };
            let step = trainer.train_step(&[frames.clone()], &stage)?;
            let enc = encode_sequence(&trainer.model, &frames, 32, 0)?;
            let stream = read_sequence(&write_sequence(&enc.bitstream)?)?;
            verify(&enc.reconstructions, &decode_sequence(&trainer.model, &stream)?)?;
            Ok(step.loss)
        })();
        match result {
            Ok(loss) if loss.is_finite() => notes.push(format!("{v} ok")),
            Ok(loss) => {
                ok = false;
                notes.push(format!("{v} loss {loss}"));
            }
            Err(e) => {
                ok = false;
                notes.push(format!("{v} failed: {e}"));
            }
        }
    }
    (ok, notes.join(", "))
}

/// Compact model, lambda 840, one 5-frame 64x64 clip, 1000 steps.
fn overfit_smoke(out: &mut Outcome) -> Smoke {
    let t = Instant::now();
    let clip = moving_texture(5, 64, 64, Motion { dx: 1.0, dy: 0.5 }, 1).unwrap();
    let config = TrainingConfig {
        lambda_index: SMOKE_LAMBDA_INDEX as usize,
        stages: default_schedule(4, [50, 150, 600, 200], 1e-3),
        ..TrainingConfig::default()
    };
    let model = Model::new(&ModelConfig::preset("compact").unwrap(), 1).unwrap();
    let sampler = ClipSampler::new(vec![clip.clone()], None).unwrap();
    let mut trainer = Trainer::new(model, config.clone()).unwrap();
    let mut step100 = None;
    let mut failure = None;
    for stage in &config.stages {
        let res = trainer.run_stage(stage, &sampler, &mut |tr, r| {
            if r.step == 100 {
                step100 = evaluate_clip(&tr.model, &tr.config, &clip, 4).ok().map(|e| e.loss);
            }
        });
        if let Err(e) = res {
            failure = Some(e.to_string());
            break;
        }
    }
    let steps = trainer.step;
    let model = trainer.model;
    let final_loss = evaluate_clip(&model, &config, &clip, 4).map(|e| e.loss).unwrap_or(f64::NAN);
    let p_psnr: Vec<f64> = encode_sequence(&model, &clip, 32, SMOKE_LAMBDA_INDEX)
        .map(|enc| {
            clip.iter()
                .zip(&enc.reconstructions)
                .skip(1)
                .map(|(a, b)| psnr(a, b).unwrap_or(f64::NAN))
                .collect()
        })
        .unwrap_or_default();
    let min_psnr = p_psnr.iter().copied().fold(f64::INFINITY, f64::min);
    let elapsed = t.elapsed();
    let (ok, detail) = match (failure, step100) {
        (Some(e), _) => (false, format!("training failed: {e}")),
        (None, None) => (false, "no step-100 evaluation".into()),
        (None, Some(l100)) => (
            steps <= 2000 && final_loss < 0.25 * l100 && min_psnr >= 28.0,
            format!(
                "{steps} steps, loss {l100:.4} at step 100 -> {final_loss:.4} ({:.4}x), P-frame PSNR {:?} dB",
                final_loss / l100,
                p_psnr.iter().map(|p| (p * 100.0).round() / 100.0).collect::<Vec<_>>()
            ),
        ),
    };
    out.record("overfit smoke training", ok, detail, elapsed, secs(1800));
    Smoke { model, elapsed }
}

/// 96 frames at 56x60 display (padded to 64x64), intra period 32.
fn rate_and_protocol(out: &mut Outcome, smoke: &Smoke) {
    let t = Instant::now();
    let seq = moving_texture(96, 56, 60, Motion { dx: 0.75, dy: 0.5 }, 2).unwrap();
    let report = run_test_protocol(
        &[("drift".into(), seq.clone())],
        &[RatePoint {
            lambda_index: SMOKE_LAMBDA_INDEX,
            lambda: 840.0,
            model: &smoke.model,
        }],
        96,
        32,
    );
    let report = match report {
        Ok(r) => r,
        Err(e) => {
            let msg = format!("protocol run failed: {e}");
            out.record("rate-vs-bits consistency", false, msg.clone(), t.elapsed(), secs(1800));
            out.record("protocol arithmetic", false, msg, t.elapsed(), secs(1800));
            return;
        }
    };
    let elapsed = t.elapsed();

    let mut worst_excess = f64::NEG_INFINITY;
    let mut worst_deficit = f64::NEG_INFINITY;
    let mut checked = 0;
    for row in report.rows.iter().filter(|r| !r.intra) {
        let Some(est) = row.estimate_bits else { continue };
        let bits = (8 * row.record_bytes) as f64;
        worst_deficit = worst_deficit.max(est - bits);
        worst_excess = worst_excess.max(bits - (1.02 * est + 512.0));
        checked += 1;
    }
    out.record(
        "rate-vs-bits consistency",
        checked == 93 && worst_deficit <= 0.0 && worst_excess <= 0.0,
        format!(
            "{checked} P-frames; largest shortfall below the estimate {worst_deficit:.1} bits, \
             largest excess over 1.02x + 64 B {worst_excess:.1} bits"
        ),
        elapsed,
        secs(1800),
    );

    let intra: Vec<usize> = report.rows.iter().filter(|r| r.intra).map(|r| r.frame).collect();
    let point = &report.points[0];
    let file_bpp = encode_sequence(&smoke.model, &seq, 32, SMOKE_LAMBDA_INDEX)
        .and_then(|e| write_sequence(&e.bitstream))
        .map(|b| b.len() as f64 * 8.0 / (56.0 * 60.0 * 96.0))
        .unwrap_or(f64::NAN);
    let display_psnr = display_mean_psnr(&smoke.model, &seq);
    out.record(
        "protocol arithmetic",
        intra == [0, 32, 64] && point.bpp == file_bpp && point.psnr == display_psnr && point.msssim.is_none(),
        format!(
            "I-frames at {intra:?}, report bpp {:.6} vs file bpp {file_bpp:.6}, PSNR {:.3} dB vs display-region {display_psnr:.3} dB",
            point.bpp, point.psnr
        ),
        elapsed,
        secs(1800),
    );
}

/// Mean PSNR of decoded frames cropped by hand to the display window.
fn display_mean_psnr(model: &Model, seq: &[Frame]) -> f64 {
    let Ok(enc) = encode_sequence(model, seq, 32, SMOKE_LAMBDA_INDEX) else { return f64::NAN };
    let mut total = 0.0;
    for (a, b) in seq.iter().zip(&enc.reconstructions) {
        let (h, w) = (a.display_height(), a.display_width());
        let mut se = 0.0f64;
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let d = a.at(c, y, x) as f64 - b.at(c, y, x) as f64;
                    se += d * d;
                }
            }
        }
        let mse = se / (3 * h * w) as f64;
        total += if mse == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / mse).log10() };
    }
    total / seq.len() as f64
}

fn decodability(out: &mut Outcome, smoke: &Smoke) {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("smoke.ckpt");
    let stream = dir.path().join("seq.lstc");
    let seq = moving_texture(33, 64, 64, Motion { dx: -0.5, dy: 1.0 }, 5).unwrap();

    let result = (|| -> Result<(usize, usize), String> {
        let header = CheckpointHeader {
            model: smoke.model.config().clone(),
            lambda: 840.0,
            lambda_index: SMOKE_LAMBDA_INDEX,
            mode: DistortionMode::Mse,
            stage: "smoke".into(),
            step: 0,
        };
        checkpoint::save(&ckpt, &header, &smoke.model).map_err(|e| e.to_string())?;
        let enc = encode_sequence(&smoke.model, &seq, 32, SMOKE_LAMBDA_INDEX).map_err(|e| e.to_string())?;
        std::fs::write(&stream, write_sequence(&enc.bitstream).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let child = Command::new(env!("CARGO_BIN_EXE_ltvc"))
            .arg("decode")
            .arg("--checkpoint")
            .arg(&ckpt)
            .arg(&stream)
            .output()
            .map_err(|e| e.to_string())?;
        if !child.status.success() {
            return Err(format!("decoder exited with {}: {}", child.status, String::from_utf8_lossy(&child.stderr)));
        }
        let stdout = String::from_utf8_lossy(&child.stdout);
        let decoded: Vec<&str> = stdout
            .lines()
            .filter(|l| l.starts_with("frame "))
            .filter_map(|l| l.rsplit(' ').next())
            .collect();
        let intra = enc.stats.iter().filter(|s| s.intra).count();
        if decoded.len() != enc.stats.len() {
            return Err(format!("decoder reported {} frames, encoder {}", decoded.len(), enc.stats.len()));
        }
        for (i, (s, d)) in enc.stats.iter().zip(&decoded).enumerate() {
            if s.hash != *d {
                return Err(format!("frame {i}: decoder hash {d} differs from encoder {}", s.hash));
            }
        }
        Ok((decoded.len(), intra))
    })();
    let rans_failures = common::rans_round_trips(10_000, 106);
    let (ok, detail) = match result {
        Ok((n, intra)) => (
            n == 33 && intra == 2 && rans_failures == 0,
            format!("{n} frames ({intra} intra) match across processes; rANS failures {rans_failures} / 10000"),
        ),
        Err(e) => (false, format!("{e}; rANS failures {rans_failures} / 10000")),
    };
    out.record("decodability", ok, detail, t.elapsed(), secs(300));
}
