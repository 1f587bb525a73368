//! Risk prediction with interpretable latent concepts.
//!
//! The crate learns a probabilistic model that ties a patient's risk to
//! five hemodynamic concepts (vascular resistance, arterial compliance,
//! systole/diastole times, cardiac output), grounds the concepts with a
//! two-element Windkessel forward model, and trains an amortized MAP
//! network that emits a risk estimate together with the concept values
//! that support it. Synthetic cohorts sampled from the same generative
//! process stand in for clinical data and drive the evaluation protocol.

pub mod cohort;
pub mod diffcore;
pub mod dist;
mod error;
pub mod eval;
pub mod model;
pub mod oracle;
pub mod train;
pub mod windkessel;

pub use error::{LpsError, Result};
