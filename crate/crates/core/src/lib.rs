//! Head-animation toolkit built around the FLAME parametric head model.
//!
//! The crate covers the full parameter-space pipeline at workstation scale:
//!
//! - [`flame`] — the statistical head model: blend shapes, linear blend
//!   skinning, 6D rotation codecs, and a synthetic mini asset for tests.
//! - [`render`] — a deterministic software rasterizer that turns FLAME
//!   meshes into multi-view image sequences and sprite sheets.
//! - [`diffusion`] — DDPM training and sampling over pose/expression
//!   parameter sequences conditioned on label text, with classifier-free
//!   guidance and sliding-window smoothing.
//! - [`attention`] — the reference / temporal / view attention kernels used
//!   by multi-view video denoisers, as standalone differentiable ops.
//! - [`corpus`] / [`metrics`] — synthetic text-to-sequence datasets and the
//!   parameter-space metrics (variability, parameter L1).
//!
//! Everything is f64, deterministic under a fixed seed, and exercised by
//! oracle-based tests; reverse-mode gradients come from the small tape in
//! [`autodiff`].

pub mod attention;
pub mod autodiff;
mod blobio;
pub mod corpus;
pub mod diffusion;
pub mod error;
pub mod flame;
pub mod math;
pub mod metrics;
pub mod render;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
