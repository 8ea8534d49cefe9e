//! Command-line driver for the depth compression pipeline.
//!
//! Subcommands cover the whole workflow: `gen-synthetic` writes a seeded
//! corpus, `train` fits the learned codec, `encode`/`decode` move depth maps
//! in and out of `DTCM` containers, `eval` measures round-trip quality, and
//! `sweep` produces rate–distortion CSV curves.
//!
//! Every option can also come from a `key=value` config file (`--config`);
//! explicit flags win over file entries, which win over the built-in
//! defaults. Each run prints its resolved configuration to stderr so the
//! exact settings can be replayed later. Multi-file commands process inputs
//! in parallel under the `--jobs` bound, but print results in input order.

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use std::collections::HashMap;
use std::error::Error;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use depthtcm::codec::checkpoint::{load_model, save_model};
use depthtcm::codec::nn::Params as _;
use depthtcm::codec::train::{build_corpus, ema_smooth, run_training, sample_from_map, Adam};
use depthtcm::codec::{CodecConfig, CodecModel, LossWeights};
use depthtcm::container::{
    decode_bytes, encode_depth, read_depth_auto, CodecId, IngestOptions, PipelineConfig,
};
use depthtcm::depth::{write_png16, write_raw_f32, DepthMap};
use depthtcm::metrics::compute_metrics;
use depthtcm::sweep::{rd_sweep, to_csv, SweepConfig, SweepVariable, TrainRecipe};
use depthtcm::synth::{generate, SynthConfig};

#[derive(Parser)]
#[command(
    name = "depthtcm",
    version,
    about = "Depth-map compression via multiwavelength fringe encoding"
)]
struct Cli {
    /// Key=value defaults file; flags override its entries.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Worker threads for multi-file commands (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compress depth files into DTCM containers.
    Encode(EncodeArgs),
    /// Reconstruct depth files from DTCM containers.
    Decode(DecodeArgs),
    /// Round-trip depth files in memory and report quality metrics.
    Eval(EvalArgs),
    /// Rate–distortion sweep over bit depths or λ values, as CSV.
    Sweep(SweepArgs),
    /// Write a seeded synthetic depth corpus.
    GenSynthetic(GenArgs),
    /// Train the learned codec and save a checkpoint.
    Train(TrainArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CodecArg {
    Baseline,
    Learned,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutFormat {
    /// Raw f32 planes with a 16-byte header (`.df32`).
    Raw,
    /// 16-bit grayscale PNG.
    Png,
}

/// Flags shared by the pipeline-running subcommands.
#[derive(Args)]
struct PipelineArgs {
    /// Quantizer bits per fringe channel (2..=8).
    #[arg(long)]
    bits: Option<u8>,
    /// Entropy pipeline for the coded planes.
    #[arg(long, value_enum)]
    codec: Option<CodecArg>,
    /// Fringe period in working depth units.
    #[arg(long)]
    period: Option<f64>,
    /// 16-bit PNG sample treated as invalid; negative disables masking.
    #[arg(long, value_name = "INT")]
    mask_sentinel: Option<i64>,
    /// Unit scale for 16-bit PNG samples (e.g. 0.001 for millimeters).
    #[arg(long)]
    png_scale: Option<f64>,
    /// Checkpoint file; required by the learned codec.
    #[arg(long, value_name = "FILE")]
    model: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    /// Depth files: 16-bit PNG or raw f32.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Output container file (single input) or directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct DecodeArgs {
    /// DTCM container files.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Output depth file (single input) or directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output depth format.
    #[arg(long, value_enum)]
    format: Option<OutFormat>,
    /// Unit scale for 16-bit PNG output samples.
    #[arg(long)]
    png_scale: Option<f64>,
    /// Sample written at invalid pixels of 16-bit PNG output.
    #[arg(long, value_name = "INT")]
    mask_sentinel: Option<i64>,
}

#[derive(Args)]
struct EvalArgs {
    /// Depth files to round-trip.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[command(flatten)]
    pipeline: PipelineArgs,
}

#[derive(Args)]
struct SweepArgs {
    /// Depth files forming the corpus; omit to use a synthetic one.
    inputs: Vec<PathBuf>,
    /// Comma-separated bit depths to sweep with the baseline codec.
    #[arg(long, value_delimiter = ',')]
    bits: Option<Vec<u8>>,
    /// Comma-separated λ values to sweep with the learned codec.
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    /// Synthetic corpus size when no input files are given.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Seed for the synthetic corpus and λ-sweep training.
    #[arg(long)]
    seed: Option<u64>,
    /// Training steps per λ value.
    #[arg(long)]
    steps: Option<usize>,
    /// Training batch size per λ value.
    #[arg(long)]
    batch: Option<usize>,
    /// Training learning rate per λ value.
    #[arg(long)]
    lr: Option<f64>,
    /// Record wall-clock times (makes the CSV nondeterministic).
    #[arg(long)]
    measure_time: bool,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fringe period in working depth units.
    #[arg(long)]
    period: Option<f64>,
    /// 16-bit PNG sample treated as invalid; negative disables masking.
    #[arg(long, value_name = "INT")]
    mask_sentinel: Option<i64>,
    /// Unit scale for 16-bit PNG samples.
    #[arg(long)]
    png_scale: Option<f64>,
}

#[derive(Args)]
struct GenArgs {
    /// Number of maps to generate.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Base seed; map i uses seed+i.
    #[arg(long)]
    seed: Option<u64>,
    /// Fraction of pixels masked invalid.
    #[arg(long)]
    mask_fraction: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Depth files to train on; omit to use a synthetic corpus.
    inputs: Vec<PathBuf>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Rate–distortion multiplier.
    #[arg(long)]
    lambda: Option<f64>,
    /// Seed for model init, synthetic corpus, and batch sampling.
    #[arg(long)]
    seed: Option<u64>,
    /// Synthetic corpus size when no input files are given.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    /// Checkpoint output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Quantizer bits per fringe channel for the training samples.
    #[arg(long)]
    bits: Option<u8>,
    /// Fringe period in working depth units.
    #[arg(long)]
    period: Option<f64>,
    /// 16-bit PNG sample treated as invalid; negative disables masking.
    #[arg(long, value_name = "INT")]
    mask_sentinel: Option<i64>,
    /// Unit scale for 16-bit PNG samples.
    #[arg(long)]
    png_scale: Option<f64>,
}

// ── Config-file fallback ─────────────────────────────────────────────────────

/// `key=value` defaults loaded from `--config`. Keys use the long flag
/// names; `-` and `_` are interchangeable; `#` starts a comment.
struct FileCfg(HashMap<String, String>);

impl FileCfg {
    fn load(path: Option<&Path>) -> Result<Self, Box<dyn Error>> {
        let mut map = HashMap::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path)
                .map_err(|e| format!("{}: {e}", path.display()))?;
            for (no, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    format!("{}:{}: expected key=value", path.display(), no + 1)
                })?;
                map.insert(
                    key.trim().replace('-', "_"),
                    value.trim().to_string(),
                );
            }
        }
        Ok(FileCfg(map))
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>, Box<dyn Error>>
    where
        T::Err: std::fmt::Display,
    {
        match self.0.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| format!("config key {key}={raw}: {e}").into()),
        }
    }
}

/// Flag value, else config-file value, else default.
fn pick<T: FromStr>(
    flag: Option<T>,
    cfg: &FileCfg,
    key: &str,
    default: T,
) -> Result<T, Box<dyn Error>>
where
    T::Err: std::fmt::Display,
{
    Ok(flag.or(cfg.get(key)?).unwrap_or(default))
}

fn pick_opt<T: FromStr>(
    flag: Option<T>,
    cfg: &FileCfg,
    key: &str,
) -> Result<Option<T>, Box<dyn Error>>
where
    T::Err: std::fmt::Display,
{
    Ok(flag.or(cfg.get(key)?))
}

/// Like [`pick_opt`] for comma-separated lists.
fn pick_list<T: FromStr>(
    flag: Option<Vec<T>>,
    cfg: &FileCfg,
    key: &str,
) -> Result<Option<Vec<T>>, Box<dyn Error>>
where
    T::Err: std::fmt::Display,
{
    if flag.is_some() {
        return Ok(flag);
    }
    match cfg.0.get(key) {
        None => Ok(None),
        Some(raw) => raw
            .split(',')
            .map(|part| part.trim().parse())
            .collect::<Result<Vec<T>, _>>()
            .map(Some)
            .map_err(|e| format!("config key {key}={raw}: {e}").into()),
    }
}

impl FromStr for CodecArg {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(CodecArg::Baseline),
            "learned" => Ok(CodecArg::Learned),
            other => Err(format!("unknown codec {other:?}")),
        }
    }
}

impl FromStr for OutFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raw" => Ok(OutFormat::Raw),
            "png" => Ok(OutFormat::Png),
            other => Err(format!("unknown format {other:?}")),
        }
    }
}

// ── Resolved settings ────────────────────────────────────────────────────────

struct Resolved {
    pipeline: PipelineConfig,
    ingest: IngestOptions,
    model_path: Option<PathBuf>,
}

fn sentinel_from(v: i64) -> Option<u16> {
    u16::try_from(v).ok()
}

fn resolve_pipeline(args: &PipelineArgs, cfg: &FileCfg) -> Result<Resolved, Box<dyn Error>> {
    let bits = pick(args.bits, cfg, "bits", 4u8)?;
    if !(2..=8).contains(&bits) {
        return Err(format!("--bits must be in 2..=8, got {bits}").into());
    }
    let codec = match pick(args.codec, cfg, "codec", CodecArg::Baseline)? {
        CodecArg::Baseline => CodecId::Baseline,
        CodecArg::Learned => CodecId::Learned,
    };
    let period = pick(args.period, cfg, "period", 8.0)?;
    let sentinel = sentinel_from(pick(args.mask_sentinel, cfg, "mask_sentinel", 0i64)?);
    let png_scale = pick(args.png_scale, cfg, "png_scale", 1.0)?;
    let model_path = pick_opt(args.model.clone(), cfg, "model")?;
    Ok(Resolved {
        pipeline: PipelineConfig {
            bits: (bits, bits, bits),
            codec,
            period,
            adaptive: None,
        },
        ingest: IngestOptions {
            png_scale,
            png_sentinel: sentinel,
        },
        model_path,
    })
}

impl Resolved {
    fn describe(&self) -> String {
        let codec = match self.pipeline.codec {
            CodecId::Baseline => "baseline",
            CodecId::Learned => "learned",
        };
        let mut s = format!(
            "bits={} codec={codec} period={} png_scale={} mask_sentinel={}",
            self.pipeline.bits.0,
            self.pipeline.period,
            self.ingest.png_scale,
            self.ingest
                .png_sentinel
                .map_or("none".into(), |v| v.to_string()),
        );
        if let Some(p) = &self.model_path {
            let _ = write!(s, " model={}", p.display());
        }
        s
    }

    /// Loads the checkpoint when the learned codec is selected.
    fn load_model(&self) -> Result<Option<CodecModel>, Box<dyn Error>> {
        match (self.pipeline.codec, &self.model_path) {
            (CodecId::Learned, Some(path)) => Ok(Some(load_model(path)?)),
            (CodecId::Learned, None) => {
                Err("the learned codec needs --model <checkpoint>".into())
            }
            _ => Ok(None),
        }
    }
}

fn print_config(cmd: &str, detail: &str) {
    eprintln!("resolved config: cmd={cmd} {detail}");
}

// ── Output path handling ─────────────────────────────────────────────────────

/// Output path for input i of n: an explicit file for a single input, a
/// directory for several (created on demand), or a sibling of the input
/// with `ext` when no --out was given.
fn out_path(
    input: &Path,
    out: Option<&Path>,
    n_inputs: usize,
    ext: &str,
) -> Result<PathBuf, Box<dyn Error>> {
    let named_file = |p: &Path| p.extension().is_some() && !p.is_dir();
    match out {
        None => Ok(input.with_extension(ext)),
        Some(p) if n_inputs == 1 && named_file(p) => Ok(p.to_path_buf()),
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let stem = input
                .file_stem()
                .ok_or_else(|| format!("no file name in {}", input.display()))?;
            Ok(dir.join(stem).with_extension(ext))
        }
    }
}

// ── Subcommands ──────────────────────────────────────────────────────────────

fn cmd_encode(args: &EncodeArgs, cfg: &FileCfg) -> Result<(), Box<dyn Error>> {
    let r = resolve_pipeline(&args.pipeline, cfg)?;
    print_config("encode", &r.describe());
    let model = r.load_model()?;

    let out = pick_opt(args.out.clone(), cfg, "out")?;
    let results: Vec<Result<String, String>> = args
        .inputs
        .par_iter()
        .map(|input| {
            let mut local = model.clone();
            let mut run = || -> Result<String, Box<dyn Error>> {
                let map = read_depth_auto(input, &r.ingest)?;
                let bytes = encode_depth(&map, &r.pipeline, local.as_mut())?;
                let dst = out_path(input, out.as_deref(), args.inputs.len(), "dtcm")?;
                fs::write(&dst, &bytes)?;
                let bpp = 8.0 * bytes.len() as f64 / map.values.len() as f64;
                Ok(format!(
                    "{} -> {} ({} bytes, {bpp:.4} bpp)",
                    input.display(),
                    dst.display(),
                    bytes.len()
                ))
            };
            run().map_err(|e| format!("{}: {e}", input.display()))
        })
        .collect();
    report_results(results)
}

fn cmd_decode(args: &DecodeArgs, cfg: &FileCfg) -> Result<(), Box<dyn Error>> {
    let format = pick(args.format, cfg, "format", OutFormat::Raw)?;
    let png_scale: f64 = pick(args.png_scale, cfg, "png_scale", 1.0)?;
    let sentinel = sentinel_from(pick(args.mask_sentinel, cfg, "mask_sentinel", 0i64)?).unwrap_or(0);
    let out = pick_opt(args.out.clone(), cfg, "out")?;
    print_config(
        "decode",
        &format!(
            "format={} png_scale={png_scale} mask_sentinel={sentinel}",
            match format {
                OutFormat::Raw => "raw",
                OutFormat::Png => "png",
            }
        ),
    );

    let results: Vec<Result<String, String>> = args
        .inputs
        .par_iter()
        .map(|input| {
            let run = || -> Result<String, Box<dyn Error>> {
                let bytes = fs::read(input)?;
                let dec = decode_bytes(&bytes)?;
                let ext = match format {
                    OutFormat::Raw => "df32",
                    OutFormat::Png => "png",
                };
                let dst = out_path(input, out.as_deref(), args.inputs.len(), ext)?;
                match format {
                    OutFormat::Raw => write_raw_f32(&dst, &dec.depth, 1.0)?,
                    OutFormat::Png => write_png16(&dst, &dec.depth, png_scale, sentinel)?,
                }
                Ok(format!(
                    "{} -> {} ({}x{})",
                    input.display(),
                    dst.display(),
                    dec.header.width,
                    dec.header.height
                ))
            };
            run().map_err(|e| format!("{}: {e}", input.display()))
        })
        .collect();
    report_results(results)
}

fn cmd_eval(args: &EvalArgs, cfg: &FileCfg) -> Result<(), Box<dyn Error>> {
    let r = resolve_pipeline(&args.pipeline, cfg)?;
    print_config("eval", &r.describe());
    let model = r.load_model()?;

    let results: Vec<Result<String, String>> = args
        .inputs
        .par_iter()
        .map(|input| {
            let mut local = model.clone();
            let mut run = || -> Result<String, Box<dyn Error>> {
                let map = read_depth_auto(input, &r.ingest)?;
                let bytes = encode_depth(&map, &r.pipeline, local.as_mut())?;
                let dec = decode_bytes(&bytes)?;
                let m = compute_metrics(&map, &dec.depth.values, 8 * bytes.len() as u64, None)?;
                Ok(format!(
                    "{}: bpp={} psnr_db={} rmse={} nrmse={} accuracy_pct={} cr={}",
                    input.display(),
                    m.bpp,
                    m.psnr_db,
                    m.rmse,
                    m.nrmse,
                    m.accuracy_pct,
                    m.compression_ratio
                ))
            };
            run().map_err(|e| format!("{}: {e}", input.display()))
        })
        .collect();
    report_results(results)
}

fn cmd_sweep(args: &SweepArgs, cfg: &FileCfg) -> Result<(), Box<dyn Error>> {
    let bits = pick_list(args.bits.clone(), cfg, "bits")?;
    let lambda = pick_list(args.lambda.clone(), cfg, "lambda")?;
    let variable = match (bits, lambda) {
        (Some(b), None) => SweepVariable::Bits(b),
        (None, Some(l)) => SweepVariable::Lambda(l),
        (Some(_), Some(_)) => return Err("--bits and --lambda are mutually exclusive".into()),
        (None, None) => return Err("give --bits or --lambda to sweep over".into()),
    };

    let seed = pick(args.seed, cfg, "seed", 0u64)?;
    let period = pick(args.period, cfg, "period", 8.0)?;
    let sentinel = sentinel_from(pick(args.mask_sentinel, cfg, "mask_sentinel", 0i64)?);
    let png_scale = pick(args.png_scale, cfg, "png_scale", 1.0)?;
    let ingest = IngestOptions {
        png_scale,
        png_sentinel: sentinel,
    };

    let count = pick(args.count, cfg, "count", 8usize)?;
    let width = pick(args.width, cfg, "width", 128usize)?;
    let height = pick(args.height, cfg, "height", 128usize)?;
    let corpus: Vec<DepthMap> = if args.inputs.is_empty() {
        (0..count)
            .map(|i| {
                generate(&SynthConfig {
                    width,
                    height,
                    seed: seed + i as u64,
                    ..SynthConfig::default()
                })
            })
            .collect()
    } else {
        args.inputs
            .iter()
            .map(|p| read_depth_auto(p, &ingest).map_err(Box::<dyn Error>::from))
            .collect::<Result<_, _>>()?
    };

    let sweep_cfg = SweepConfig {
        pipeline: PipelineConfig {
            period,
            ..PipelineConfig::default()
        },
        train: TrainRecipe {
            model: CodecConfig::default(),
            steps: pick(args.steps, cfg, "steps", 50usize)?,
            batch_size: pick(args.batch, cfg, "batch", 4usize)?,
            lr: pick(args.lr, cfg, "lr", 1e-4)?,
            seed,
        },
        measure_time: args.measure_time || cfg.get("measure_time")?.unwrap_or(false),
    };
    let out = pick_opt(args.out.clone(), cfg, "out")?;
    print_config(
        "sweep",
        &format!(
            "variable={variable:?} corpus={} period={period} seed={seed} measure_time={}",
            corpus.len(),
            sweep_cfg.measure_time
        ),
    );

    let points = rd_sweep(&corpus, &variable, &sweep_cfg)?;
    let csv = to_csv(&points);
    match out {
        Some(path) => {
            fs::write(&path, csv)?;
            eprintln!("wrote {}", path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

fn cmd_gen(args: &GenArgs, cfg: &FileCfg) -> Result<(), Box<dyn Error>> {
    let count = pick(args.count, cfg, "count", 16usize)?;
    if count == 0 {
        return Err("--count must be at least 1".into());
    }
    let width = pick(args.width, cfg, "width", 128usize)?;
    let height = pick(args.height, cfg, "height", 128usize)?;
    let seed = pick(args.seed, cfg, "seed", 0u64)?;
    let mask_fraction = pick(args.mask_fraction, cfg, "mask_fraction", 0.0f64)?;
    let out = pick(args.out.clone(), cfg, "out", PathBuf::from("corpus"))?;
    print_config(
        "gen-synthetic",
        &format!(
            "count={count} width={width} height={height} seed={seed} \
             mask_fraction={mask_fraction} out={}",
            out.display()
        ),
    );

    fs::create_dir_all(&out)?;
    for i in 0..count {
        let map = generate(&SynthConfig {
            width,
            height,
            seed: seed + i as u64,
            mask_fraction,
            ..SynthConfig::default()
        });
        let path = out.join(format!("map_{i:04}.df32"));
        write_raw_f32(&path, &map, 1.0)?;
    }
    println!("wrote {count} maps to {}", out.display());
    Ok(())
}

fn cmd_train(args: &TrainArgs, cfg: &FileCfg) -> Result<(), Box<dyn Error>> {
    let steps = pick(args.steps, cfg, "steps", 200usize)?;
    let batch = pick(args.batch, cfg, "batch", 4usize)?;
    let lr = pick(args.lr, cfg, "lr", 1e-4)?;
    let lambda = pick(args.lambda, cfg, "lambda", 0.05)?;
    let seed = pick(args.seed, cfg, "seed", 0u64)?;
    let bits = pick(args.bits, cfg, "bits", 4u8)?;
    let period = pick(args.period, cfg, "period", 8.0)?;
    let count = pick(args.count, cfg, "count", 64usize)?;
    let width = pick(args.width, cfg, "width", 64usize)?;
    let height = pick(args.height, cfg, "height", 64usize)?;
    let out = pick(args.out.clone(), cfg, "out", PathBuf::from("model.ckpt"))?;
    let sentinel = sentinel_from(pick(args.mask_sentinel, cfg, "mask_sentinel", 0i64)?);
    let png_scale = pick(args.png_scale, cfg, "png_scale", 1.0)?;
    print_config(
        "train",
        &format!(
            "steps={steps} batch={batch} lr={lr} lambda={lambda} seed={seed} bits={bits} \
             period={period} corpus={} out={}",
            if args.inputs.is_empty() {
                format!("synthetic({count}x{width}x{height})")
            } else {
                format!("{} files", args.inputs.len())
            },
            out.display()
        ),
    );

    let samples = if args.inputs.is_empty() {
        build_corpus(count, width, height, seed, period, (bits, bits, bits))?
    } else {
        let ingest = IngestOptions {
            png_scale,
            png_sentinel: sentinel,
        };
        args.inputs
            .iter()
            .map(|p| {
                let map = read_depth_auto(p, &ingest)?;
                Ok(sample_from_map(&map, period, (bits, bits, bits))?)
            })
            .collect::<Result<Vec<_>, Box<dyn Error>>>()?
    };

    let mut model = CodecModel::new(
        CodecConfig::default(),
        &mut ChaCha20Rng::seed_from_u64(seed),
    )?;
    let w = LossWeights {
        lambda,
        ..LossWeights::default()
    };
    let mut opt = Adam::new(lr, model.param_count());
    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x5eed);
    let stats = run_training(&mut model, &samples, steps, batch, &w, &mut opt, &mut rng)?;

    let totals: Vec<f64> = stats.iter().map(|s| s.total).collect();
    let smoothed = ema_smooth(&totals, 0.9);
    for (i, s) in stats.iter().enumerate() {
        if (i + 1) % 20 == 0 || i + 1 == stats.len() {
            println!(
                "step {:>4}: loss={:.5} (smoothed {:.5}) mse={:.6} bpp={:.4}",
                i + 1,
                s.total,
                smoothed[i],
                s.parts.mse,
                s.parts.bpp
            );
        }
    }
    if let (Some(first), Some(last)) = (smoothed.first(), smoothed.last()) {
        println!(
            "smoothed loss: {first:.5} -> {last:.5} ({:+.1}%)",
            100.0 * (last - first) / first
        );
    }
    save_model(&mut model, &out)?;
    println!("saved checkpoint to {}", out.display());
    Ok(())
}

/// Prints per-file outcomes in input order; fails if any file failed.
fn report_results(results: Vec<Result<String, String>>) -> Result<(), Box<dyn Error>> {
    let mut failures = 0usize;
    for r in results {
        match r {
            Ok(line) => println!("{line}"),
            Err(line) => {
                eprintln!("error: {line}");
                failures += 1;
            }
        }
    }
    if failures > 0 {
        Err(format!("{failures} file(s) failed").into())
    } else {
        Ok(())
    }
}

fn run() -> Result<(), Box<dyn Error>> {
    let cli = Cli::parse();
    let cfg = FileCfg::load(cli.config.as_deref())?;
    let jobs = pick_opt(cli.jobs, &cfg, "jobs")?;
    if let Some(n) = jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()?;
    }
    match &cli.cmd {
        Cmd::Encode(a) => cmd_encode(a, &cfg),
        Cmd::Decode(a) => cmd_decode(a, &cfg),
        Cmd::Eval(a) => cmd_eval(a, &cfg),
        Cmd::Sweep(a) => cmd_sweep(a, &cfg),
        Cmd::GenSynthetic(a) => cmd_gen(a, &cfg),
        Cmd::Train(a) => cmd_train(a, &cfg),
    }
}

fn main() {
    if let Err(e) = run() {
        eprint!("error: {e}");
        let mut src = e.source();
        while let Some(s) = src {
            eprint!(": {s}");
            src = s.source();
        }
        eprintln!();
        std::process::exit(1);
    }
}
