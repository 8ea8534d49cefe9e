//! Depth-map compression built around a multiwavelength depth (MWD) encoding.
//!
//! A depth map is turned into a three-channel image — a sine/cosine fringe
//! pair plus a normalized coarse-depth channel — quantized to a few bits per
//! channel, and entropy coded. Decoding recovers the wrapped phase from the
//! fringe pair, resolves the fringe order from the coarse channel, and
//! reconstructs depth to a precision far beyond what the channel bit depth
//! alone would suggest.
//!
//! ```text
//!            ┌──────────┐   ┌───────────┐   ┌──────────────────┐
//!  depth ──► │ prescale │ ► │ MWD encode│ ► │ quantize (2..8b) │
//!            └──────────┘   └───────────┘   └────────┬─────────┘
//!                                                    ▼
//!                              ┌──────────────────────────────────┐
//!                              │ entropy code: predictive baseline│
//!                              │ or learned transform + hyperprior│
//!                              └────────────────┬─────────────────┘
//!                                               ▼
//!                                       "DTCM" container
//! ```
//!
//! Modules mirror the pipeline stages:
//!
//! * [`depth`] — depth-map type and file ingestion (16-bit PNG, raw f32)
//! * [`mwd`] — fringe encode/decode, phase unwrapping, prescaling
//! * [`quant`] — uniform and complexity-adaptive quantization, training proxies
//! * [`entropy`] — range coder, CDF models, predictive baseline plane codec
//! * [`codec`] — toy learned codec: transforms, hyperprior, losses, training
//! * [`metrics`] — NRMSE/accuracy/PSNR/bpp reports
//! * [`container`] — the `DTCM` bitstream container
//! * [`synth`] — seeded synthetic depth-map generator
//! * [`sweep`] — rate–distortion sweeps over bit depths or λ values

pub mod codec;
pub mod container;
pub mod depth;
pub mod entropy;
pub mod metrics;
pub mod mwd;
pub mod quant;
pub mod sweep;
pub mod synth;

pub use container::{decode_file, encode_file, ContainerHeader, PipelineConfig};
pub use depth::DepthMap;
pub use metrics::{compute_metrics, MetricsReport};
pub use mwd::{FringeParams, MwdImage, ScaleRecord};
