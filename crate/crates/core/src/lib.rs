//! Patterned-flash imaging in simulation.
//!
//! The crate covers the full loop: dot-array flash patterns ([`pattern`]),
//! the image-formation model with sensor noise ([`forward`]), closed-form
//! and Monte-Carlo SNR analysis ([`snr`]), joint scene-image and sub-pixel
//! disparity recovery ([`recon`]), procedural scene sets ([`synth`]) and
//! the PF-vs-UF benchmark harness ([`bench`]).

pub mod bench;
pub mod cli;
pub mod error;
pub mod forward;
pub mod image;
pub mod io;
pub mod manifest;
pub mod metrics;
pub mod pattern;
pub mod recon;
pub mod report;
pub mod rng;
pub mod snr;
pub mod synth;

pub use crate::error::{Error, Result};
pub use crate::forward::{Attenuation, CameraRig, NoiseParams};
pub use crate::image::{Image, MapKind, Mask, PlanarMap};
pub use crate::pattern::Pattern;
pub use crate::recon::{ReconConfig, ReconResult, StepRule};
pub use crate::rng::Seed;
