//! Allelic imbalance detection with left-truncated count mixture models.
//!
//! The crate is organised bottom-up:
//!
//! * [`specfun`] continued fractions for the regularized incomplete beta
//!   function and `3F2` at unit argument,
//! * [`dist`] PMFs, CDFs, truncation, moments and extended-precision tails for
//!   the NB, BetaNB and MCNB families,
//! * [`model`] the interchangeable count models behind a common trait,
//!   reference-bias and BAD mixtures, windows and the DTBin diagnostic,
//! * [`fit`] sliding-window maximum likelihood / MAP estimation,
//! * [`scoring`] p-values, effect sizes and their combination,
//! * [`difftest`] differential allele-specificity tests,
//! * [`io`] ingestion, the project store and the reproduce log.

pub mod difftest;
pub mod dist;
pub mod error;
pub mod fit;
pub mod io;
pub mod model;
pub mod real;
pub mod scoring;
pub mod sim;
pub mod specfun;
pub mod stats;

pub use error::{Error, Result};
