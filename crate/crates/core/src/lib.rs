//! Night-scene degradation synthesis and illumination-guided diffusion restoration.
//!
//! The crate is split along the data flow:
//!
//! * [`image`]: the `f64` raster shared by every stage, plus 8-bit PNG I/O.
//! * [`weathersynth`]: raindrop, rain, snow, fog and haze compositing with
//!   seeded procedural masks, streaks and transmission maps.
//! * [`lowlight`]: the iterated quadratic darkening curve with calibrated,
//!   spatially varying adjustment maps.
//! * [`illumest`]: Retinex-style illumination estimation with cascaded
//!   residual refinement.
//! * [`diffcore`]: noise schedule, forward noising, the noise-prediction
//!   objective and deterministic implicit (DDIM, `eta = 0`) sampling.
//! * [`guidednet`]: a small conditional denoiser with illumination
//!   cross-attention, hand-written reverse-mode gradients and a toy trainer.
//! * [`tiler`]: overlapping patch plans and per-pixel noise averaging around
//!   the reverse loop.
//! * [`metrics`]: PSNR and SSIM.
//! * [`pipeline`]: weather then darkening for one image, with replay.
//!
//! Every random quantity is derived from a single `u64` seed through the
//! schedule in [`seed`].

pub mod diffcore;
pub mod error;
pub mod guidednet;
pub mod illumest;
pub mod image;
pub mod lowlight;
pub mod metrics;
pub mod noise;
pub mod pipeline;
pub mod seed;
pub mod tiler;
pub mod toy;
pub mod weathersynth;

pub use diffcore::{Denoiser, NoiseSchedule, Region};
pub use error::{Error, Result};
pub use guidednet::{Architecture, TinyDenoiser};
pub use illumest::IlluminationMap;
pub use image::ImageBuffer;
pub use lowlight::{AdjustmentMapStack, ExposureConfig};
pub use metrics::MetricReport;
pub use tiler::TilePlan;
pub use weathersynth::{DegradationKind, WeatherMetadata, WeatherParams};
