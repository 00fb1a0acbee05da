//! Sparse, connectivity-constrained adversarial attacks on object detectors.
//!
//! The pipeline has two phases. First a perturbation mask is searched for:
//! a SmoothGrad salience map is thresholded at `mean + phi * std`, the
//! resulting mask is cleaned up with Half-Neighbor passes (keep a pixel iff at
//! least half of its `k×k` window is set), and `phi` is raised until the mask
//! fits the pixel budget (2% of the image) and the region budget (at most 10
//! 8-connected regions). Then projected gradient ascent runs on the detector
//! loss with the perturbation confined to that mask.
//!
//! The attacked model is [`microdetect::DetectorModel`], a small grid detector
//! with both an objectness head and a class head with a background class, so
//! the single-stage and two-stage attack losses can be exercised together.
//!
//! The modules, bottom-up:
//!
//! * [`imagetensor`]: images, masks, bilinear resize and its adjoint, PNG I/O
//! * [`microdetect`]: the detector, its backward pass, scenes and training
//! * [`salience`]: SmoothGrad maps
//! * [`maskgen`]: thresholding, Half-Neighbor refinement, region counting
//! * [`attack`]: losses, masked PGD and the end-to-end pipeline
//! * [`cli`]: the `hnm-pgd` command-line tool

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod cli;
pub mod error;
pub mod imagetensor;
pub mod kv;
pub mod maskgen;
pub mod microdetect;
pub mod salience;

pub use error::{Error, Result};
