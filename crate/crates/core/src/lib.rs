//! Predictive climate control for electrically driven vehicle A/C systems.
//!
//! * [`model`]: bilinear two-state prediction model and power models.
//! * [`sysid`]: excitation, least-squares identification and multi-step validation.
//! * [`nmpc`]: single-shooting energy-minimizing NMPC with soft state bounds.
//! * [`icm`]: speed-preview constraint scheduling.
//! * [`plant`]: lumped surrogate plant with a nominal PI baseline.
//! * [`harness`]: scenarios, closed-loop runs, energy accounting and file I/O.

pub mod error;
pub mod harness;
pub mod icm;
pub mod model;
pub mod nmpc;
pub mod plant;
pub mod sysid;

pub use error::{Error, Result};
