//! Iterative plug-and-play image restoration.
//!
//! The crate is organised around a single currency type, [`Image`], a
//! single-channel `f32` raster with nominal range `[0, 1]`. On top of it sit:
//!
//! - [`degrade`]: measurement operators (identity, Gaussian blur, ×2 bicubic
//!   resample) and additive white Gaussian noise.
//! - [`metrics`]: RMSE / PSNR / SSIM on the 0–255 scale.
//! - [`tvprox`]: the anisotropic-TV proximal solver (shrinkage plus a DCT
//!   diagonalised quadratic solve).
//! - [`diter`]: the outer y/g/I alternation around a pluggable prior.
//! - [`nnexec`]: a small CNN executor for the residual U-Net generator and its
//!   portable weight bundle format.

// `!(x > 0.0)` is the idiom used to reject NaN alongside bad values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod degrade;
pub mod diter;
pub mod error;
pub mod image;
pub mod metrics;
pub mod nnexec;
pub mod tvprox;

pub use degrade::{Boundary, DegradationOp, Kernel, NoiseLevelMap, OpKind, ResizeFactor};
pub use diter::{run_diamond, ConvergenceTrace, DiterParams, IterRecord, Prior, PriorOperator};
pub use error::{Error, Result};
pub use image::{Image, ImageFormat, PatchSet};
pub use metrics::{MetricReport, Psnr};
pub use nnexec::{generator_forward, load_bundle, ModelGraph, Tensor};
pub use tvprox::{GradientField, TvParams, TvProxOutput};
