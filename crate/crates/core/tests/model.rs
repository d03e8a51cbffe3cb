use std::collections::BTreeMap;

use ltvc_core::bitstream::{bpp_of, read_sequence, write_sequence, FrameRecord};
use ltvc_core::checkpoint::{self, DistortionMode};
use ltvc_core::codec::{decode_sequence, encode_sequence};
use ltvc_core::frame::pad_to_multiple16;
use ltvc_core::latent::Quantizer;
use ltvc_core::metrics::psnr;
use ltvc_core::model::Model;
use ltvc_core::protocol::{intra_indices, run_test_protocol, verify, RatePoint};
use ltvc_core::synthetic::{moving_texture, Motion};
use ltvc_core::train::{
    finetune_msssim, unroll_clip, Stage, StageKind, Trainer, TrainingConfig, DEFAULT_LAMBDAS, DEFAULT_WEIGHTS,
};
use ltvc_core::{Error, Frame, ModelConfig, Variant};
use ltvc_tensor::Tape;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn clip(frames: usize, h: usize, w: usize) -> Vec<Frame> {
    moving_texture(frames, h, w, Motion { dx: 1.0, dy: -0.5 }, 3).unwrap()
}

fn one_stage(kind: StageKind, p_frames: usize, steps: usize) -> Stage {
    Stage {
        name: "only".into(),
        kind,
        p_frames,
        steps,
        learning_rate: 1e-3,
    }
}

#[test]
fn every_parameter_group_receives_gradient() {
    let model = Model::new(&ModelConfig::tiny(), 5).unwrap();
    let frames: Vec<Frame> = clip(3, 32, 32).iter().map(pad_to_multiple16).collect();
    let tape = Tape::new();
    let p = model.params.bind(&tape, |_| true);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut q = Quantizer::Noise(&mut rng);
    let fwd = unroll_clip(
        &model.nets,
        &p,
        &frames,
        2,
        StageKind::Full,
        DEFAULT_LAMBDAS[3],
        &DEFAULT_WEIGHTS,
        DistortionMode::Mse,
        &mut q,
    )
    .unwrap();
    let grads = tape.backward(&fwd.loss);
    // group by module: the name up to the last two components
    let mut groups: BTreeMap<String, f64> = BTreeMap::new();
    for (id, name, _) in model.params.iter() {
        let parts: Vec<&str> = name.split('.').collect();
        let group = parts[..parts.len().saturating_sub(2).max(1)].join(".");
        let norm = grads.get(&p[id]).map_or(0.0, |g| g.sq_norm());
        *groups.entry(group).or_default() += norm;
    }
    let dead: Vec<&String> = groups.iter().filter(|(_, &n)| !(n > 0.0)).map(|(g, _)| g).collect();
    assert!(dead.is_empty(), "groups without gradient: {dead:?}");
    assert!(groups.len() > 10);
}

#[test]
fn ablation_variants_train_and_code() {
    let frames = clip(3, 32, 32);
    for v in [Variant::Ma, Variant::Mb, Variant::Mc] {
        let model = Model::new(&ModelConfig::tiny().with_variant(v), 2).unwrap();
        let mut trainer = Trainer::new(model, TrainingConfig::default()).unwrap();
        let report = trainer
            .train_step(&[frames.clone()], &one_stage(StageKind::Full, 2, 1))
            .unwrap_or_else(|e| panic!("{v}: {e}"));
        assert!(report.loss.is_finite(), "{v}");
        let enc = encode_sequence(&trainer.model, &frames[..2], 32, 3).unwrap();
        let stream = read_sequence(&write_sequence(&enc.bitstream).unwrap()).unwrap();
        verify(&enc.reconstructions, &decode_sequence(&trainer.model, &stream).unwrap()).unwrap();
    }
}

#[test]
fn container_bits_bracket_the_table_estimate() {
    let model = Model::new(&ModelConfig::tiny(), 9).unwrap();
    let frames = clip(6, 40, 48);
    let enc = encode_sequence(&model, &frames, 32, 0).unwrap();
    for (i, s) in enc.stats.iter().enumerate().skip(1) {
        let est = s.estimate.unwrap().total();
        let bits = (8 * s.record_bytes) as f64;
        assert!(bits >= est, "frame {i}: {bits} < {est}");
        assert!(bits <= 1.02 * est + 512.0, "frame {i}: {bits} > 1.02 * {est} + 512");
    }
}

#[test]
fn protocol_layout_rates_and_display_metrics() {
    let model = Model::new(&ModelConfig::tiny(), 4).unwrap();
    let seq = moving_texture(96, 20, 36, Motion { dx: 0.5, dy: 0.25 }, 8).unwrap();
    let report = run_test_protocol(
        &[("drift".into(), seq.clone())],
        &[RatePoint {
            lambda_index: 1,
            lambda: DEFAULT_LAMBDAS[1],
            model: &model,
        }],
        96,
        32,
    )
    .unwrap();
    let intra: Vec<usize> = report.rows.iter().filter(|r| r.intra).map(|r| r.frame).collect();
    assert_eq!(intra, vec![0, 32, 64]);
    assert_eq!(intra, intra_indices(96, 32));
    assert_eq!(report.rows.len() - intra.len(), 93);

    let enc = encode_sequence(&model, &seq, 32, 1).unwrap();
    let bytes = write_sequence(&enc.bitstream).unwrap();
    let stream = read_sequence(&bytes).unwrap();
    let p = &report.points[0];
    assert_eq!(p.bpp, bytes.len() as f64 * 8.0 / (20.0 * 36.0 * 96.0));
    assert_eq!(p.bpp, bpp_of(&stream));
    assert!(p.msssim.is_none());
    assert_eq!(stream.records.iter().filter(|r| r.is_intra()).count(), 3);

    // per-frame breakdown sums to the container records
    for (row, rec) in report.rows.iter().zip(&stream.records) {
        let payload: usize = match rec {
            FrameRecord::Intra(b) => b.len(),
            FrameRecord::Inter(s) => s.iter().map(Vec::len).sum(),
        };
        assert_eq!(row.motion_bits + row.context_bits, 8 * payload);
        assert_eq!(row.record_bytes, rec.byte_len());
    }

    // PSNR on the display window, not the padded frame
    let decoded = decode_sequence(&model, &stream).unwrap();
    let mean = seq.iter().zip(&decoded).map(|(a, b)| psnr(a, b).unwrap()).sum::<f64>() / 96.0;
    assert_eq!(p.psnr, mean);
    let cropped: Vec<f32> = decoded[5].display_data();
    assert_eq!(cropped.len(), 3 * 20 * 36);
}

#[test]
fn truncated_container_names_the_frame() {
    let model = Model::new(&ModelConfig::tiny(), 4).unwrap();
    let frames = clip(3, 32, 32);
    let enc = encode_sequence(&model, &frames, 32, 3).unwrap();
    let mut stream = enc.bitstream.clone();
    if let FrameRecord::Inter(segs) = &mut stream.records[2] {
        segs[3].truncate(segs[3].len() / 2);
    }
    match decode_sequence(&model, &stream) {
        Err(Error::Corruption { frame: Some(2), .. }) => {}
        other => panic!("expected corruption at frame 2, got {other:?}"),
    }
    let bytes = write_sequence(&enc.bitstream).unwrap();
    assert!(read_sequence(&bytes[..bytes.len() - 3]).is_err());
}

#[test]
fn encoding_is_deterministic() {
    let model = Model::new(&ModelConfig::tiny(), 4).unwrap();
    let frames = clip(4, 32, 32);
    let a = write_sequence(&encode_sequence(&model, &frames, 32, 3).unwrap().bitstream).unwrap();
    let b = write_sequence(&encode_sequence(&model, &frames, 32, 3).unwrap().bitstream).unwrap();
    assert_eq!(a, b);
}

#[test]
fn msssim_finetune_tags_checkpoint_and_leaves_source_intact() {
    let dir = tempfile::tempdir().unwrap();
    let model = Model::new(&ModelConfig::tiny(), 6).unwrap();
    let before: Vec<Vec<f32>> = model.params.iter().map(|(_, _, t)| t.data().to_vec()).collect();
    let config = TrainingConfig {
        lambda_index: 2,
        clip_length: 2,
        msssim_stage: Stage {
            name: "msssim".into(),
            ..one_stage(StageKind::Full, 2, 1)
        },
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..TrainingConfig::default()
    };
    let tuned = finetune_msssim(&model, &config, vec![clip(3, 32, 32)], &mut |_, _| {}).unwrap();
    let after: Vec<Vec<f32>> = model.params.iter().map(|(_, _, t)| t.data().to_vec()).collect();
    assert_eq!(before, after);
    assert!(tuned.params.iter().zip(model.params.iter()).any(|(a, b)| a.2 != b.2));
    let (h, _) = checkpoint::load(&dir.path().join("lambda2_msssim.ckpt")).unwrap();
    assert_eq!(h.mode, DistortionMode::Msssim);
    assert_eq!(h.lambda, DEFAULT_LAMBDAS[2]);
    assert_eq!(h.lambda_index, 2);
}
