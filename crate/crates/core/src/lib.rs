//! Radar occupancy prediction from 4D imaging radar tensors.
//!
//! The crate covers the whole path from a parametric scene to a Cartesian
//! occupancy grid:
//!
//! - [`radar`]: FMCW ADC synthesis, the FFT chain to a 4D radar tensor, and
//!   CA-CFAR point extraction.
//! - [`reduction`]: Doppler bins descriptors and per-range top-N sparsification.
//! - [`geometry`]: spherical/Cartesian conversion, the index mapping into the
//!   spherical feature volume, region-of-interest grids, field-of-view masks.
//! - [`network`]: range-wise self-attention, sparse 3D convolutions,
//!   deformable self and cross attention, and the occupancy decoder.
//! - [`occupancy`]: ground-truth generation from labelled sweeps, training
//!   losses, and IoU metrics.
//! - [`sim`], [`dataset`]: parametric desk scenes and training pairs.
//! - [`train`], [`commands`]: optimizer, schedule and the experiment commands.
//!
//! Everything is built on the small reverse-mode core in [`tensor`].

pub mod commands;
pub mod config;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod io;
pub mod network;
pub mod occupancy;
pub mod radar;
pub mod reduction;
pub mod sim;
pub mod tensor;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
