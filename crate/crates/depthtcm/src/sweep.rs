//! Rate–distortion sweeps over bit depths or Lagrangian multipliers.
//!
//! A sweep runs the full encode → decode → measure loop for every setting
//! in a list, aggregates per-image metrics into one point per setting, and
//! renders the points as CSV. Two sweep axes exist:
//!
//! * **bit depths** — the baseline codec at uniform per-channel depths;
//! * **λ values** — the learned codec, with a fresh model trained per λ
//!   from the same seed, so the points differ only through the multiplier.
//!
//! Aggregation rules keep the metric couplings exact: `rmse`, `nrmse`, and
//! `psnr_db` are means over the corpus (in image order, so the reduction is
//! deterministic), `accuracy_pct` is re-derived from the aggregate `nrmse`,
//! and the rate fields pool the integer bit counts — `bpp` is total coded
//! bits over total pixels, not a mean of ratios. Per-image work may run in
//! parallel; results are collected back into image order before reduction.
//!
//! Wall-clock timing is optional because it is the one nondeterministic
//! column: with `measure_time` off (the default), `enc_ms`/`dec_ms` are
//! zero and a sweep's CSV is byte-identical across runs.
//!
//! At desk scale a learned-codec container carries its model checkpoint, so
//! λ-sweep rates are checkpoint-dominated; the λ axis still orders points
//! deterministically, but absolute bpp mostly reflects the embedded model.

use rayon::prelude::*;
use std::time::Instant;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::codec::nn::Params as _;
use crate::codec::train::{run_training, sample_from_map, Adam};
use crate::codec::{CodecConfig, CodecError, CodecModel, LossWeights};
use crate::container::{decode_bytes, encode_depth, CodecId, ContainerError, PipelineConfig};
use crate::depth::DepthMap;
use crate::metrics::{compute_metrics, MetricsError, MetricsReport};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("no settings to sweep")]
    EmptySettings,
    #[error("image {index}: {source}")]
    Image {
        index: usize,
        #[source]
        source: Box<ContainerError>,
    },
    #[error("image {index}: {source}")]
    Metrics {
        index: usize,
        #[source]
        source: MetricsError,
    },
    #[error(transparent)]
    Train(#[from] CodecError),
}

/// The swept axis: uniform quantizer depths for the baseline codec, or
/// Lagrangian multipliers for the learned one.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepVariable {
    Bits(Vec<u8>),
    Lambda(Vec<f64>),
}

/// One setting drawn from a [`SweepVariable`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepSetting {
    Bits(u8),
    Lambda(f64),
}

impl std::fmt::Display for SweepSetting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SweepSetting::Bits(b) => write!(f, "{b}"),
            SweepSetting::Lambda(l) => write!(f, "{l}"),
        }
    }
}

/// Aggregated rate–distortion point for one sweep setting.
#[derive(Debug, Clone, PartialEq)]
pub struct RdPoint {
    pub setting: SweepSetting,
    pub report: MetricsReport,
    /// Mean wall-clock encode/decode time per image, milliseconds; zero
    /// when timing is off.
    pub enc_ms: f64,
    pub dec_ms: f64,
}

/// Training recipe for λ sweeps; ignored by bit-depth sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainRecipe {
    pub model: CodecConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainRecipe {
    fn default() -> Self {
        TrainRecipe {
            model: CodecConfig::default(),
            steps: 50,
            batch_size: 4,
            lr: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepConfig {
    /// Base pipeline; the codec field is overridden by the sweep axis and
    /// `bits` by each bit-depth setting.
    pub pipeline: PipelineConfig,
    pub train: TrainRecipe,
    /// Record wall-clock times. Off by default so sweep output is
    /// byte-deterministic.
    pub measure_time: bool,
}

struct ImageResult {
    report: MetricsReport,
    enc_ms: f64,
    dec_ms: f64,
}

fn eval_one(
    map: &DepthMap,
    cfg: &PipelineConfig,
    model: Option<&CodecModel>,
    index: usize,
    measure_time: bool,
) -> Result<ImageResult, SweepError> {
    // Each parallel task clones the model: encode paths take `&mut` for
    // their layer caches even though evaluation leaves parameters alone.
    let mut local = model.cloned();
    let t0 = Instant::now();
    let bytes = encode_depth(map, cfg, local.as_mut()).map_err(|e| SweepError::Image {
        index,
        source: Box::new(e),
    })?;
    let enc_ms = if measure_time {
        t0.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };
    let t1 = Instant::now();
    let decoded = decode_bytes(&bytes).map_err(|e| SweepError::Image {
        index,
        source: Box::new(e),
    })?;
    let dec_ms = if measure_time {
        t1.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };
    let report = compute_metrics(map, &decoded.depth.values, 8 * bytes.len() as u64, None)
        .map_err(|e| SweepError::Metrics { index, source: e })?;
    Ok(ImageResult {
        report,
        enc_ms,
        dec_ms,
    })
}

/// Means of the distortion fields, pooled integer rate fields, and the
/// exact couplings re-established on the aggregate.
fn aggregate(setting: SweepSetting, results: &[ImageResult]) -> RdPoint {
    let n = results.len() as f64;
    let mut rmse = 0.0;
    let mut nrmse = 0.0;
    let mut psnr = 0.0;
    let mut coded_bits = 0u64;
    let mut pixel_count = 0u64;
    let mut valid = 0u64;
    let mut enc_ms = 0.0;
    let mut dec_ms = 0.0;
    for r in results {
        rmse += r.report.rmse;
        nrmse += r.report.nrmse;
        psnr += r.report.psnr_db;
        coded_bits += r.report.coded_bits;
        pixel_count += r.report.pixel_count;
        valid += r.report.valid_pixel_count;
        enc_ms += r.enc_ms;
        dec_ms += r.dec_ms;
    }
    let nrmse = nrmse / n;
    let report = MetricsReport {
        rmse: rmse / n,
        nrmse,
        psnr_db: psnr / n,
        accuracy_pct: (1.0 - nrmse) * 100.0,
        bpp: coded_bits as f64 / pixel_count as f64,
        compression_ratio: (crate::metrics::DEFAULT_RAW_BPP * pixel_count) as f64
            / coded_bits as f64,
        valid_pixel_count: valid,
        coded_bits,
        pixel_count,
    };
    RdPoint {
        setting,
        report,
        enc_ms: enc_ms / n,
        dec_ms: dec_ms / n,
    }
}

fn sweep_one_setting(
    corpus: &[DepthMap],
    cfg: &PipelineConfig,
    model: Option<&CodecModel>,
    setting: SweepSetting,
    measure_time: bool,
) -> Result<RdPoint, SweepError> {
    let results: Vec<ImageResult> = corpus
        .par_iter()
        .enumerate()
        .map(|(i, map)| eval_one(map, cfg, model, i, measure_time))
        .collect::<Result<_, _>>()?;
    Ok(aggregate(setting, &results))
}

/// Trains a fresh model for one λ: same init seed, same data order, so two
/// λ values differ only through the loss multiplier.
fn train_for_lambda(
    corpus: &[DepthMap],
    base: &PipelineConfig,
    recipe: &TrainRecipe,
    lambda: f64,
) -> Result<CodecModel, SweepError> {
    let mut model = CodecModel::new(
        recipe.model,
        &mut ChaCha20Rng::seed_from_u64(recipe.seed),
    )?;
    let samples = corpus
        .iter()
        .map(|m| sample_from_map(m, base.period, base.bits))
        .collect::<Result<Vec<_>, _>>()?;
    let w = LossWeights {
        lambda,
        ..LossWeights::default()
    };
    let mut opt = Adam::new(recipe.lr, model.param_count());
    let mut rng = ChaCha20Rng::seed_from_u64(recipe.seed ^ 0x5eed);
    run_training(
        &mut model,
        &samples,
        recipe.steps,
        recipe.batch_size,
        &w,
        &mut opt,
        &mut rng,
    )?;
    Ok(model)
}

/// Runs the sweep and returns one aggregated point per setting, in the
/// order the settings were given. Use [`to_csv`] for the rate-sorted
/// rendering.
pub fn rd_sweep(
    corpus: &[DepthMap],
    variable: &SweepVariable,
    cfg: &SweepConfig,
) -> Result<Vec<RdPoint>, SweepError> {
    if corpus.is_empty() {
        return Err(SweepError::EmptyCorpus);
    }
    match variable {
        SweepVariable::Bits(list) => {
            if list.is_empty() {
                return Err(SweepError::EmptySettings);
            }
            list.iter()
                .map(|&b| {
                    let p = PipelineConfig {
                        bits: (b, b, b),
                        codec: CodecId::Baseline,
                        ..cfg.pipeline
                    };
                    sweep_one_setting(corpus, &p, None, SweepSetting::Bits(b), cfg.measure_time)
                })
                .collect()
        }
        SweepVariable::Lambda(list) => {
            if list.is_empty() {
                return Err(SweepError::EmptySettings);
            }
            list.iter()
                .map(|&l| {
                    let model = train_for_lambda(corpus, &cfg.pipeline, &cfg.train, l)?;
                    let p = PipelineConfig {
                        codec: CodecId::Learned,
                        ..cfg.pipeline
                    };
                    sweep_one_setting(
                        corpus,
                        &p,
                        Some(&model),
                        SweepSetting::Lambda(l),
                        cfg.measure_time,
                    )
                })
                .collect()
        }
    }
}

/// CSV header for [`to_csv`].
pub const CSV_HEADER: &str = "setting,bpp,psnr_db,rmse,nrmse,accuracy_pct,cr,enc_ms,dec_ms";

/// Renders sweep points as CSV, rows sorted by bpp ascending. Floats print
/// in Rust's shortest round-trip form; an infinite PSNR prints as `inf`.
pub fn to_csv(points: &[RdPoint]) -> String {
    let mut sorted: Vec<&RdPoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.report.bpp.partial_cmp(&b.report.bpp).unwrap());
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for p in sorted {
        let r = &p.report;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            p.setting,
            r.bpp,
            r.psnr_db,
            r.rmse,
            r.nrmse,
            r.accuracy_pct,
            r.compression_ratio,
            p.enc_ms,
            p.dec_ms
        ));
    }
    out
}
