use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ltvc_core::bdrate::{bd_rate, CurvePoint};
use ltvc_core::bitstream::{bpp_of, read_sequence, write_sequence};
use ltvc_core::checkpoint::{self, CheckpointHeader};
use ltvc_core::codec::{contexts_at, decode_sequence, encode_sequence, frame_hash};
use ltvc_core::frame::save_png;
use ltvc_core::heatmap::context_heatmap;
use ltvc_core::model::Model;
use ltvc_core::protocol::{run_test_protocol, summary, write_csv, RatePoint};
use ltvc_core::run::RunConfig;
use ltvc_core::train::{finetune_msssim, train, StepReport, Trainer};
use ltvc_core::{Error, Result, Variant};
use serde::Deserialize;

#[derive(Parser)]
#[command(name = "ltvc", version, about = "Learned video codec with a long-term reference chain")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(0..=3))]
    lambda_index: Option<u8>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, default_value_t = 32)]
    intra_period: usize,
    /// Ma, Mb, Mc or full.
    #[arg(long)]
    variant: Option<Variant>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model for the configured rate point.
    Train {
        #[command(flatten)]
        common: Common,
        /// Fine-tune `--checkpoint` for MS-SSIM instead of training from scratch.
        #[arg(long)]
        msssim: bool,
    },
    /// Code a configured sequence into a container file.
    Encode {
        #[command(flatten)]
        common: Common,
        /// Sequence name from the config (default: the first).
        #[arg(long)]
        sequence: Option<String>,
    },
    /// Decode a container into PNG frames.
    Decode {
        #[command(flatten)]
        common: Common,
        /// Container file.
        input: PathBuf,
    },
    /// Run the test protocol over every configured sequence.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Extra checkpoints beyond those in the config.
        #[arg(long = "with")]
        extra: Vec<PathBuf>,
    },
    /// BD-rate of a test CSV against an anchor CSV.
    Bdrate {
        anchor: PathBuf,
        test: PathBuf,
        #[arg(long, value_enum, default_value_t = Metric::Psnr)]
        metric: Metric,
    },
    /// Channel-mean map of the full-resolution context of one P-frame.
    Heatmap {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sequence: Option<String>,
        /// Frame index (must be a P-frame).
        #[arg(long, default_value_t = 1)]
        frame: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Psnr,
    Msssim,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Verification { .. } => 4,
        Error::Numeric(_) | Error::Encoding(_) => 1,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train { common, msssim } => cmd_train(&common, msssim),
        Command::Encode { common, sequence } => cmd_encode(&common, sequence.as_deref()),
        Command::Decode { common, input } => cmd_decode(&common, &input),
        Command::Eval { common, extra } => cmd_eval(&common, &extra),
        Command::Bdrate { anchor, test, metric } => cmd_bdrate(&anchor, &test, metric),
        Command::Heatmap { common, sequence, frame } => cmd_heatmap(&common, sequence.as_deref(), frame),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn config(common: &Common) -> Result<RunConfig> {
    let path = common
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut c = RunConfig::load(path)?;
    if let Some(i) = common.lambda_index {
        c.training.lambda_index = i as usize;
    }
    if let Some(s) = common.seed {
        c.training.seed = s;
    }
    if let Some(v) = common.variant {
        c.model.variant = Some(v);
    }
    c.training.validate()?;
    Ok(c)
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref().ok_or_else(|| Error::Config(format!("{flag} is required")))
}

/// Loads a checkpoint and checks it against a requested variant.
fn load_checkpoint(common: &Common) -> Result<(CheckpointHeader, Model)> {
    let (h, m) = checkpoint::load(required(&common.checkpoint, "--checkpoint")?)?;
    if let Some(v) = common.variant {
        if v != h.model.variant {
            return Err(Error::Config(format!("checkpoint holds variant {}, not {v}", h.model.variant)));
        }
    }
    Ok((h, m))
}

fn progress(t: &Trainer, r: &StepReport) {
    if r.step % 10 == 0 {
        eprintln!(
            "step {:>6} {:<10} loss {:.5} grad-norm {:.3} (lambda {})",
            r.step,
            r.stage,
            r.loss,
            r.grad_norm,
            t.config.lambda()
        );
    }
}

fn cmd_train(common: &Common, msssim: bool) -> Result<()> {
    let cfg = config(common)?;
    let out = required(&common.out, "--out")?;
    let data = cfg
        .data
        .iter()
        .map(|d| d.load(common.frames.unwrap_or(d.frames()).min(d.frames())))
        .collect::<Result<Vec<_>>>()?;
    let (model, stage, mut tcfg) = if msssim {
        let (h, m) = load_checkpoint(common)?;
        let mut t = cfg.training.clone();
        t.lambda_index = h.lambda_index as usize;
        let m = finetune_msssim(&m, &t, data, &mut progress)?;
        t.mode = checkpoint::DistortionMode::Msssim;
        (m, t.msssim_stage.name.clone(), t)
    } else {
        let model = Model::new(&cfg.model.build()?, cfg.training.seed)?;
        let m = train(model, &cfg.training, data, &mut progress)?;
        let stage = cfg.training.stages.last().map(|s| s.name.clone()).unwrap_or_default();
        (m, stage, cfg.training.clone())
    };
    tcfg.stages.clear();
    let header = CheckpointHeader {
        model: model.config().clone(),
        lambda: tcfg.lambda(),
        lambda_index: tcfg.lambda_index as u8,
        mode: tcfg.mode,
        stage,
        step: 0,
    };
    checkpoint::save(out, &header, &model)?;
    println!("saved {} (lambda {}, mode {})", out.display(), header.lambda, header.mode);
    Ok(())
}

fn cmd_encode(common: &Common, sequence: Option<&str>) -> Result<()> {
    let cfg = config(common)?;
    let out = required(&common.out, "--out")?;
    let (h, model) = load_checkpoint(common)?;
    let src = cfg.source(sequence)?;
    let frames = src.load(common.frames.unwrap_or(src.frames()))?;
    let tag = common.lambda_index.unwrap_or(h.lambda_index);
    let enc = encode_sequence(&model, &frames, common.intra_period, tag)?;
    let bytes = write_sequence(&enc.bitstream)?;
    std::fs::write(out, &bytes)?;
    let pixels = (frames[0].display_height() * frames[0].display_width() * frames.len()) as f64;
    println!(
        "{}: {} frames, {} bytes, {:.6} bpp",
        src.name(),
        frames.len(),
        bytes.len(),
        bytes.len() as f64 * 8.0 / pixels
    );
    for (i, s) in enc.stats.iter().enumerate() {
        let est = s.estimate.map(|e| format!(" estimate {:.1}", e.total())).unwrap_or_default();
        println!(
            "frame {i} {} bits {}{est} hash {}",
            if s.intra { "I" } else { "P" },
            8 * s.record_bytes,
            s.hash
        );
    }
    Ok(())
}

fn cmd_decode(common: &Common, input: &Path) -> Result<()> {
    let (h, model) = load_checkpoint(common)?;
    let bytes = std::fs::read(input)?;
    let stream = read_sequence(&bytes)?;
    if stream.header.lambda_index != h.lambda_index {
        eprintln!(
            "warning: stream was coded for lambda index {}, checkpoint is for {}",
            stream.header.lambda_index, h.lambda_index
        );
    }
    let frames = decode_sequence(&model, &stream)?;
    if let Some(dir) = &common.out {
        std::fs::create_dir_all(dir)?;
        for (i, f) in frames.iter().enumerate() {
            save_png(&f.crop_to_display(), &dir.join(format!("frame_{i:05}.png")))?;
        }
    }
    println!("{} frames, {:.6} bpp", frames.len(), bpp_of(&stream));
    for (i, (f, r)) in frames.iter().zip(&stream.records).enumerate() {
        println!("frame {i} {} hash {}", if r.is_intra() { "I" } else { "P" }, frame_hash(f));
    }
    Ok(())
}

fn cmd_eval(common: &Common, extra: &[PathBuf]) -> Result<()> {
    let cfg = config(common)?;
    let paths: Vec<&PathBuf> = cfg
        .eval
        .checkpoints
        .iter()
        .chain(common.checkpoint.as_ref())
        .chain(extra)
        .collect();
    if paths.is_empty() {
        return Err(Error::Config("no checkpoints to evaluate".into()));
    }
    let models = paths.iter().map(|p| checkpoint::load(p)).collect::<Result<Vec<_>>>()?;
    let rates: Vec<RatePoint> = models
        .iter()
        .map(|(h, m)| RatePoint {
            lambda_index: h.lambda_index,
            lambda: h.lambda,
            model: m,
        })
        .collect();
    let n = common.frames.unwrap_or(cfg.eval.frames);
    let period = if common.intra_period != 32 { common.intra_period } else { cfg.eval.intra_period };
    let sequences = cfg
        .data
        .iter()
        .map(|d| Ok((d.name(), d.load(n.min(d.frames()))?)))
        .collect::<Result<Vec<_>>>()?;
    let frames = sequences.iter().map(|(_, f)| f.len()).min().unwrap_or(0);
    let report = run_test_protocol(&sequences, &rates, frames, period)?;
    let text = summary(&report);
    print!("{text}");
    if let Some(out) = &common.out {
        write_csv(out, &report.points)?;
        std::fs::write(out.with_extension("txt"), text)?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct CsvRow {
    sequence: String,
    bpp: f64,
    psnr_db: f64,
    msssim: Option<f64>,
}

fn read_curves(path: &Path, metric: Metric) -> Result<BTreeMap<String, Vec<CurvePoint>>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut curves: BTreeMap<String, Vec<CurvePoint>> = BTreeMap::new();
    for row in reader.deserialize::<CsvRow>() {
        let row = row.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        let quality = match metric {
            Metric::Psnr => row.psnr_db,
            Metric::Msssim => row
                .msssim
                .ok_or_else(|| Error::Format(format!("{}: '{}' has no MS-SSIM", path.display(), row.sequence)))?,
        };
        curves.entry(row.sequence).or_default().push(CurvePoint { rate: row.bpp, quality });
    }
    Ok(curves)
}

fn cmd_bdrate(anchor: &Path, test: &Path, metric: Metric) -> Result<()> {
    let a = read_curves(anchor, metric)?;
    let t = read_curves(test, metric)?;
    let mut values = Vec::new();
    for (name, pa) in &a {
        let Some(pt) = t.get(name) else { continue };
        let v = bd_rate(pa, pt)?;
        println!("{name}: {v:+.3}%");
        values.push(v);
    }
    if values.is_empty() {
        return Err(Error::Contract("the two CSVs share no sequence".into()));
    }
    println!("average: {:+.3}%", values.iter().sum::<f64>() / values.len() as f64);
    Ok(())
}

fn cmd_heatmap(common: &Common, sequence: Option<&str>, frame: usize) -> Result<()> {
    let cfg = config(common)?;
    let out = required(&common.out, "--out")?;
    let (_, model) = load_checkpoint(common)?;
    let src = cfg.source(sequence)?;
    let frames = src.load(frame + 1)?;
    let ctx = contexts_at(&model, &frames, frame, common.intra_period)?;
    let map = context_heatmap(ctx[0].value(), model.config().levels[0])?;
    map.save_png(out)?;
    println!("wrote {}x{} map of frame {frame} to {}", map.width, map.height, out.display());
    Ok(())
}
