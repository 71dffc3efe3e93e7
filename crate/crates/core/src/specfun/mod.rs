//! Continued-fraction special functions.
//!
//! Both functions here are evaluated with the same modified Lentz driver
//! ([`lentz_eval`]) and are generic over [`Real`](crate::real::Real), so
//! they can be differentiated with dual numbers.

mod betainc;
mod hyp3f2;
mod lentz;

pub use betainc::{ln_reg_inc_beta, ln_reg_inc_beta_pair, reg_inc_beta, reg_inc_beta_branch, tretter_fraction, IncBetaBranch};
pub use hyp3f2::{hyp3f2_unit, hyp3f2_unit_with};
pub use lentz::{lentz_eval, ContinuedFraction, DEFAULT_EPS, DEFAULT_MAX_ITER, LEAD_SENTINEL};
