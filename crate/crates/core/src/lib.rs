//! SVBRDF capture toolkit.
//!
//! A flat material sample is described by four per-pixel maps (normal,
//! diffuse albedo, specular albedo, roughness) driving an isotropic
//! Cook-Torrance BRDF. This crate provides the pieces needed to
//! experiment with lightweight capture of such materials:
//!
//! - [`material`]: the map representation and the differentiable BRDF.
//! - [`render`]: a point-flash renderer with analytic gradients and the
//!   LDR degradation pipeline (noise, clipping, gamma, quantization).
//! - [`synth`]: online generation of training pairs by mixing and
//!   augmenting base materials and sampling view/light conditions.
//! - [`loss`]: the log-space rendering loss, per-map l1 terms and the
//!   total-variation regularizer.
//! - [`optim`]: a classical multi-image inverse-rendering optimizer
//!   (Adam on an unconstrained reparameterization of the maps).
//! - [`net`]: an order-invariant multi-image fusion network with
//!   hand-rolled forward and reverse passes.
//! - [`rectify`]: 4-point homography estimation and image rectification.
//! - [`metrics`]: SSIM/RMSE and the number-of-inputs evaluation harness.
//!
//! All radiometric math is linear RGB in `f64`. Every stochastic
//! operation takes an explicit seed and is bit-reproducible.

pub mod error;
pub mod image;
pub mod io;
pub mod loss;
pub mod material;
pub mod math;
pub mod metrics;
pub mod net;
pub mod optim;
pub mod rectify;
pub mod render;
pub mod synth;

pub use error::{Error, Result};
