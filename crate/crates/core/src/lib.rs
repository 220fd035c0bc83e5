//! Dynamic MRI undersampling, reconstruction and registration.
//!
//! The crate follows the acquisition chain of an accelerated cine scan:
//! coil sensitivities are estimated from the autocalibration lines, a
//! sampler chooses which phase-encode lines to keep under a per-frame
//! budget, an unrolled ADMM solver reconstructs each frame and a classical
//! deformable registration aligns the reconstructed frames to a static
//! reference frame. [`pipeline`] wires the stages together.

pub mod error;
pub mod filters;
pub mod forward;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod recon;
pub mod registration;
pub mod sampling;
pub mod sensitivity;

pub use error::{Error, Result};
