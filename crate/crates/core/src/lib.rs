//! Prior event rate ratio (PERR) estimation for matched observational cohorts.
//!
//! The crate is organised bottom-up:
//!
//! - [`cohort`]: participants, matching, analysis windows and the builders that
//!   expand a cohort into counting-process rows.
//! - [`survival`]: Breslow partial likelihood over `(start, stop]` rows,
//!   Newton-Raphson fitting and robust clustered (sandwich) variance.
//! - [`perr`]: the two-model PERR with a matched-pair bootstrap, the single
//!   interaction-model Cox PERR and the Andersen-Gill PERR.
//! - [`edt`]: detection of event-dependent treatment in the prior period,
//!   index-time shifting for controls and the corrected Andersen-Gill PERR.
//! - [`simulation`]: Weibull cohort generator with frailty and event-dependent
//!   treatment, scenario presets and replicate aggregation.

pub mod cohort;
pub mod edt;
mod error;
pub mod perr;
pub mod simulation;
pub mod survival;

pub use error::{Error, Result};

/// Two-sided 97.5% standard normal quantile.
pub const Z_975: f64 = 1.959_963_984_540_054;
