//! Rate-distortion objective, staged training and MS-SSIM fine-tuning.

use std::path::PathBuf;

use ltvc_tensor::optim::{clip_grad_norm, AdamW};
use ltvc_tensor::{Float, ParamId, ParamVars, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, CheckpointHeader, DistortionMode};
use crate::error::{Error, Result};
use crate::frame::{crop_random_patch, pad_to_multiple16, Frame};
use crate::latent::Quantizer;
use crate::metrics::{adaptive_scales, msssim_var, MSSSIM_WEIGHTS};
use crate::model::{Model, Networks};

pub const DEFAULT_LAMBDAS: [f64; 4] = [85.0, 170.0, 380.0, 840.0];
pub const DEFAULT_WEIGHTS: [f64; 4] = [0.5, 1.2, 0.5, 0.9];

/// What a stage optimises.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    /// Flow estimator and motion codec only, distortion on the warped
    /// reference.
    Motion,
    /// Every parameter.
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub name: String,
    pub kind: StageKind,
    /// P-frames unrolled per clip.
    pub p_frames: usize,
    pub steps: usize,
    pub learning_rate: f64,
}

impl Stage {
    fn validate(&self) -> Result<()> {
        if self.p_frames == 0 {
            return Err(Error::Config(format!("stage '{}' unrolls no P-frames", self.name)));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!("stage '{}' needs a positive learning rate", self.name)));
        }
        Ok(())
    }
}

/// Motion warm-up, full model on 2-frame clips, cascaded `T`-frame clips,
/// then a low learning-rate pass.
pub fn default_schedule(clip_length: usize, steps: [usize; 4], learning_rate: f64) -> Vec<Stage> {
    let s = |name: &str, kind, p_frames, steps, lr| Stage {
        name: name.into(),
        kind,
        p_frames,
        steps,
        learning_rate: lr,
    };
    vec![
        s("motion", StageKind::Motion, 1, steps[0], learning_rate),
        s("full", StageKind::Full, 1, steps[1], learning_rate),
        s("cascade", StageKind::Full, clip_length, steps[2], learning_rate),
        s("finetune", StageKind::Full, clip_length, steps[3], learning_rate / 10.0),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub lambdas: Vec<f64>,
    pub lambda_index: usize,
    /// Per-frame weights, applied cyclically.
    pub weights: Vec<f64>,
    /// `T`: P-frames per training clip.
    pub clip_length: usize,
    pub batch_size: usize,
    /// Square crop applied to each sampled clip.
    pub patch_size: Option<usize>,
    pub seed: u64,
    pub mode: DistortionMode,
    pub weight_decay: f64,
    pub grad_clip: f64,
    pub stages: Vec<Stage>,
    /// Schedule of the MS-SSIM fine-tune.
    pub msssim_stage: Stage,
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            lambdas: DEFAULT_LAMBDAS.to_vec(),
            lambda_index: 3,
            weights: DEFAULT_WEIGHTS.to_vec(),
            clip_length: 4,
            batch_size: 1,
            patch_size: None,
            seed: 0,
            mode: DistortionMode::Mse,
            weight_decay: 0.0,
            grad_clip: 10.0,
            stages: default_schedule(4, [100, 200, 500, 100], 1e-4),
            msssim_stage: Stage {
                name: "msssim".into(),
                kind: StageKind::Full,
                p_frames: 4,
                steps: 100,
                learning_rate: 1e-5,
            },
            checkpoint_dir: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambdas.is_empty() || self.lambdas.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::Config("lambdas must be positive".into()));
        }
        if self.lambda_index >= self.lambdas.len() {
            return Err(Error::Config(format!(
                "lambda index {} out of range for {} lambdas",
                self.lambda_index,
                self.lambdas.len()
            )));
        }
        if self.weights.is_empty() || self.weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(Error::Config("frame weight cycle must be non-empty and non-negative".into()));
        }
        if self.clip_length < 2 {
            return Err(Error::Config("clip length must be at least 2".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Config("gradient clip must be positive".into()));
        }
        for s in self.stages.iter().chain([&self.msssim_stage]) {
            s.validate()?;
        }
        Ok(())
    }

    pub fn lambda(&self) -> f64 {
        self.lambdas[self.lambda_index]
    }
}

/// Weight of the `i`-th P-frame of a clip (zero-based).
pub fn frame_weight(weights: &[f64], i: usize) -> f64 {
    weights[i % weights.len()]
}

/// Distortion between aligned frames: MSE on `[0, 1]` samples, or
/// `1 - MS-SSIM` with as many scales as the size allows.
pub fn distortion<T: Float>(x: &Var<T>, x_hat: &Var<T>, mode: DistortionMode) -> Result<Var<T>> {
    if x.shape() != x_hat.shape() {
        return Err(Error::dim(format!("distortion inputs {:?} / {:?}", x.shape(), x_hat.shape())));
    }
    Ok(match mode {
        DistortionMode::Mse => x.sub(x_hat).sqr().mean(),
        DistortionMode::Msssim => {
            let [_, _, h, w] = x.shape();
            let scales = adaptive_scales(h.min(w));
            msssim_var(x, x_hat, &MSSSIM_WEIGHTS[..scales]).neg().add_scalar(1.0)
        }
    })
}

/// `w * lambda * d(x, x_hat) + bits / (H * W)` with `H x W` the padded size.
pub fn rd_loss<T: Float>(
    x: &Var<T>,
    x_hat: &Var<T>,
    bits: &Var<T>,
    w: f64,
    lambda: f64,
    mode: DistortionMode,
) -> Result<Var<T>> {
    let [_, _, h, wd] = x.shape();
    let d = distortion(x, x_hat, mode)?;
    let loss = d.scale(w * lambda).add(&bits.scale(1.0 / (h * wd) as f64));
    if !loss.item().as_f64().is_finite() {
        return Err(Error::Numeric(format!("non-finite RD loss {}", loss.item().as_f64())));
    }
    Ok(loss)
}

/// Mean of the per-frame losses.
pub fn clip_loss<T: Float>(per_frame: &[Var<T>]) -> Result<Var<T>> {
    if per_frame.is_empty() {
        return Err(Error::Contract("clip loss of an empty list".into()));
    }
    let refs: Vec<&Var<T>> = per_frame.iter().collect();
    Ok(ltvc_tensor::sum_all(&refs).scale(1.0 / per_frame.len() as f64))
}

/// Outcome of unrolling one clip.
pub struct ClipForward<T: Float> {
    pub loss: Var<T>,
    pub frame_losses: Vec<f64>,
    pub x_hats: Vec<Var<T>>,
    /// Estimated bits per P-frame.
    pub bits: Vec<f64>,
}

/// Intra reconstruction used to start a training clip: 8-bit rounding of
/// the first frame, as the lossless intra path produces.
pub fn intra_var<T: Float>(f: &Frame) -> Result<Var<T>> {
    let rec = Frame::from_rgb8(f.height(), f.width(), &f.to_rgb8())?;
    Ok(rec.to_var())
}

/// Unrolls `p_frames` P-frames of `clip` (frame 0 is the intra frame) and
/// averages their RD losses.
#[allow(clippy::too_many_arguments)]
pub fn unroll_clip<T: Float, R: Rng>(
    nets: &Networks,
    p: &ParamVars<T>,
    clip: &[Frame],
    p_frames: usize,
    kind: StageKind,
    lambda: f64,
    weights: &[f64],
    mode: DistortionMode,
    quant: &mut Quantizer<'_, R>,
) -> Result<ClipForward<T>> {
    if clip.len() < p_frames + 1 {
        return Err(Error::Contract(format!(
            "clip of {} frames cannot unroll {p_frames} P-frames",
            clip.len()
        )));
    }
    let motion_only = kind == StageKind::Motion;
    let mut buf = nets.start_gop(p, &intra_var(&clip[0])?)?;
    let mut losses = Vec::with_capacity(p_frames);
    let mut x_hats = Vec::with_capacity(p_frames);
    let mut bits = Vec::with_capacity(p_frames);
    for (i, f) in clip[1..=p_frames].iter().enumerate() {
        let x = f.to_var::<T>();
        let out = nets.p_frame(p, &x, &buf, quant, motion_only)?;
        let total = out.total_bits();
        losses.push(rd_loss(&x, &out.x_hat, &total, frame_weight(weights, i), lambda, mode)?);
        bits.push(total.item().as_f64());
        if let Some(feature) = &out.feature {
            if i + 1 < p_frames {
                buf = nets.update_buffer(p, &buf, &out.x_hat, feature)?;
            }
        } else if i + 1 < p_frames {
            return Err(Error::Config("motion-only stages unroll a single P-frame".into()));
        }
        x_hats.push(out.x_hat);
    }
    Ok(ClipForward {
        frame_losses: losses.iter().map(|l| l.item().as_f64()).collect(),
        loss: clip_loss(&losses)?,
        x_hats,
        bits,
    })
}

/// Whether a parameter belongs to the motion path.
pub fn is_motion_param(name: &str) -> bool {
    name.starts_with("flow.") || name.starts_with("motion.")
}

/// Deterministic (rounded) evaluation of one clip.
#[derive(Clone, Debug)]
pub struct ClipEval {
    pub loss: f64,
    pub psnr: Vec<f64>,
    pub bits: Vec<f64>,
}

impl ClipEval {
    pub fn mean_psnr(&self) -> f64 {
        self.psnr.iter().sum::<f64>() / self.psnr.len() as f64
    }
}

#[derive(Clone, Debug)]
pub struct StepReport {
    pub step: u64,
    pub stage: String,
    pub loss: f64,
    pub grad_norm: f64,
}

/// Random clips drawn from padded sequences.
pub struct ClipSampler {
    sequences: Vec<Vec<Frame>>,
    patch: Option<usize>,
}

impl ClipSampler {
    pub fn new(sequences: Vec<Vec<Frame>>, patch: Option<usize>) -> Result<Self> {
        if sequences.is_empty() {
            return Err(Error::Contract("no training sequences".into()));
        }
        let sequences = sequences
            .into_iter()
            .map(|s| s.iter().map(pad_to_multiple16).collect())
            .collect();
        Ok(ClipSampler { sequences, patch })
    }

    /// `len` consecutive frames from a random sequence and offset.
    pub fn sample<R: Rng>(&self, len: usize, rng: &mut R) -> Result<Vec<Frame>> {
        let usable: Vec<&Vec<Frame>> = self.sequences.iter().filter(|s| s.len() >= len).collect();
        if usable.is_empty() {
            return Err(Error::Contract(format!("no training sequence has {len} frames")));
        }
        let seq = usable[rng.gen_range(0..usable.len())];
        let start = rng.gen_range(0..=seq.len() - len);
        let clip = &seq[start..start + len];
        match self.patch {
            Some(size) => crop_random_patch(clip, size, rng),
            None => Ok(clip.to_vec()),
        }
    }
}

pub struct Trainer {
    pub model: Model,
    pub config: TrainingConfig,
    opt: AdamW,
    rng: ChaCha8Rng,
    pub step: u64,
}

impl Trainer {
    pub fn new(model: Model, config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            opt: AdamW::new(1e-4, config.weight_decay),
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            model,
            config,
            step: 0,
        })
    }

    /// One optimiser update on `batch` clips. On a numeric failure the
    /// weights are left untouched.
    pub fn train_step(&mut self, batch: &[Vec<Frame>], stage: &Stage) -> Result<StepReport> {
        let tape = Tape::new();
        let p = match stage.kind {
            StageKind::Motion => self.model.params.bind(&tape, is_motion_param),
            StageKind::Full => self.model.params.bind(&tape, |_| true),
        };
        let mut grads: Vec<(ParamId, Tensor<f32>)> = Vec::new();
        let mut loss_sum = 0.0;
        for clip in batch {
            let fwd = {
                let mut q = Quantizer::Noise(&mut self.rng);
                unroll_clip(
                    &self.model.nets,
                    &p,
                    clip,
                    stage.p_frames,
                    stage.kind,
                    self.config.lambda(),
                    &self.config.weights,
                    self.config.mode,
                    &mut q,
                )?
            };
            loss_sum += fwd.loss.item() as f64;
            let mut g = tape.backward(&fwd.loss.scale(1.0 / batch.len() as f64));
            for (id, var) in p.iter() {
                if let Some(t) = g.take(var) {
                    match grads.iter_mut().find(|(gid, _)| *gid == id) {
                        Some((_, acc)) => acc.add_assign(&t),
                        None => grads.push((id, t)),
                    }
                }
            }
        }
        if grads.iter().any(|(_, g)| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient at step {}", self.step + 1)));
        }
        let grad_norm = clip_grad_norm(&mut grads, self.config.grad_clip);
        self.opt.lr = stage.learning_rate;
        self.opt.step(&mut self.model.params, &grads);
        self.step += 1;
        Ok(StepReport {
            step: self.step,
            stage: stage.name.clone(),
            loss: loss_sum / batch.len() as f64,
            grad_norm,
        })
    }

    /// Rounded-latent loss and per-frame PSNR of the full model on `clip`.
    pub fn evaluate(&self, clip: &[Frame], p_frames: usize) -> Result<ClipEval> {
        evaluate_clip(&self.model, &self.config, clip, p_frames)
    }

    /// Runs `stage` on clips from `sampler`, calling `hook` after each step.
    pub fn run_stage(
        &mut self,
        stage: &Stage,
        sampler: &ClipSampler,
        hook: &mut dyn FnMut(&Trainer, &StepReport),
    ) -> Result<()> {
        for _ in 0..stage.steps {
            let batch = (0..self.config.batch_size)
                .map(|_| sampler.sample(stage.p_frames + 1, &mut self.rng))
                .collect::<Result<Vec<_>>>()?;
            let report = self.train_step(&batch, stage)?;
            hook(self, &report);
        }
        Ok(())
    }

    pub fn header(&self, stage: &str) -> CheckpointHeader {
        CheckpointHeader {
            model: self.model.config().clone(),
            lambda: self.config.lambda(),
            lambda_index: self.config.lambda_index as u8,
            mode: self.config.mode,
            stage: stage.into(),
            step: self.step,
        }
    }
}

/// Deterministic evaluation shared by the trainer and the acceptance run.
pub fn evaluate_clip(model: &Model, config: &TrainingConfig, clip: &[Frame], p_frames: usize) -> Result<ClipEval> {
    let p = model.constants();
    let padded: Vec<Frame> = clip.iter().map(pad_to_multiple16).collect();
    let mut q = Quantizer::<ChaCha8Rng>::Round;
    let fwd = unroll_clip(
        &model.nets,
        &p,
        &padded,
        p_frames,
        StageKind::Full,
        config.lambda(),
        &config.weights,
        config.mode,
        &mut q,
    )?;
    let psnr = fwd
        .x_hats
        .iter()
        .zip(&padded[1..])
        .map(|(xh, x)| {
            let rec = Frame::from_tensor_clamped(xh.value(), x.display_height(), x.display_width())?;
            crate::metrics::psnr(x, &rec)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(ClipEval {
        loss: fwd.loss.item() as f64,
        psnr,
        bits: fwd.bits,
    })
}

/// Runs every stage of `config`, saving a checkpoint after each when a
/// directory is configured. A numeric failure aborts with the checkpoints
/// written so far left in place.
pub fn train(
    model: Model,
    config: &TrainingConfig,
    data: Vec<Vec<Frame>>,
    hook: &mut dyn FnMut(&Trainer, &StepReport),
) -> Result<Model> {
    let sampler = ClipSampler::new(data, config.patch_size)?;
    let mut trainer = Trainer::new(model, config.clone())?;
    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    for stage in &config.stages {
        trainer.run_stage(stage, &sampler, hook)?;
        if let Some(dir) = &config.checkpoint_dir {
            let path = dir.join(format!("lambda{}_{}.ckpt", config.lambda_index, stage.name));
            checkpoint::save(&path, &trainer.header(&stage.name), &trainer.model)?;
        }
    }
    Ok(trainer.model)
}

/// Continues from `model` with `1 - MS-SSIM` as distortion on the
/// `msssim_stage` schedule; `model` itself is not modified.
pub fn finetune_msssim(
    model: &Model,
    config: &TrainingConfig,
    data: Vec<Vec<Frame>>,
    hook: &mut dyn FnMut(&Trainer, &StepReport),
) -> Result<Model> {
    let mut cfg = config.clone();
    cfg.mode = DistortionMode::Msssim;
    cfg.stages = vec![config.msssim_stage.clone()];
    train(model.clone(), &cfg, data, hook)
}
