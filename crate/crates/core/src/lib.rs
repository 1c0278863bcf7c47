//! SAR imaging of breathing targets with per-echo autofocus.
//!
//! The processing chain is: simulate or load a range–angle–slow-time cube,
//! split it into echoes (range–angle weighting, then time–frequency masking
//! driven by a Gaussian-ridge mixture), estimate a respiratory phase error per
//! echo by maximizing image sharpness, and fuse the focused images
//! incoherently.

pub mod autofocus;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod io;
pub mod optim;
pub mod pipeline;
pub mod scene;
pub mod simulator;
pub mod spatial;
pub mod tf;

pub use error::{Error, Result};
