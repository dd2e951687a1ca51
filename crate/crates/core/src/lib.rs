//! Survival-analysis engine for disease-free life expectancy (Dis-FLE).
//!
//! The crate covers the whole estimation chain on the age scale:
//!
//! - [`cohort`]: ingestion, exclusion criteria, exposure windows, summaries;
//! - [`episode`], [`spline`], [`design`]: counting-process episodes on an age
//!   grid, natural spline bases and sparse design matrices;
//! - [`km`]: Kaplan-Meier under left truncation with log-log bands;
//! - [`cox`]: Breslow-ties Cox regression with age-dependent coefficients,
//!   Breslow baseline, predicted survival and hazard-ratio curves;
//! - [`indicator`]: restricted conditional expectation of disease-free life;
//! - [`adjustment`]: whole-population exposure adjustment from an age pyramid;
//! - [`validation`]: train/test split, concordance, calibration, and the
//!   synthetic cohort generator used as ground truth.
//!
//! Row-wise reductions run on rayon when the `parallel` feature is enabled
//! (default) and sequentially otherwise, with identical results.

pub mod adjustment;
pub mod calendar;
pub mod cohort;
pub mod cox;
pub mod design;
pub mod episode;
pub mod error;
pub mod indicator;
pub mod km;
pub mod par;
pub mod spline;
pub mod validation;

pub use error::{Error, Result};
