//! Low-dose CT sinogram enhancement with a convolutional network trained
//! from supervised pairs, from unlabeled acquisitions through a
//! maximum-a-posteriori objective with latent photon counts, or from both.

pub mod config;
pub mod error;
pub mod format;
pub mod geometry;
pub mod map_model;
pub mod metrics;
pub mod net;
pub mod noise;
pub mod pipeline;
pub mod rng;
pub mod trainer;

pub use error::{Error, Result};

/// Log-domain line integrals, `n_angles × n_detectors`.
pub type Sinogram = ndarray::Array2<f64>;

/// Per-pixel attenuation, `height × width`.
pub type Image = ndarray::Array2<f64>;
