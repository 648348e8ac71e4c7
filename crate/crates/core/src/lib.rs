//! Numerical core for archaeological predictive modelling.
//!
//! Everything in this crate is a pure function over in-memory rasters and
//! sample lists: terrain derivatives, exact distance transforms, label
//! rasterization, tiling and stitching, the locally-adaptive potential
//! surface, dense-CRF mean-field refinement, the dynamic-pseudolabel loss
//! algebra, positive-unlabeled evaluation metrics and site-level folds.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, parallel
//! drivers and the command line live in the `apm` companion crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;
#[cfg(any(test, feature = "std"))]
extern crate std;

pub mod crf;
pub mod edt;
mod error;
pub mod folds;
pub mod labels;
pub mod lamap;
pub mod math;
pub mod metrics;
pub mod pseudolabel;
pub mod raster;
pub mod rng;
pub mod terrain;
pub mod tiling;

pub use error::{Error, ErrorKind, Result};
pub use raster::{GeoTransform, RasterGrid, Sample};
