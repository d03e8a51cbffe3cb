//! Probability models, quantised tables and the rANS coder.

pub mod cdf;
pub mod rans;
pub mod rate;

pub use cdf::{build_cdf, CdfTable, SYMBOL_MAX, SYMBOL_MIN};
pub use rate::{estimate_rate, gaussian_bits, FactorizedPrior, RateEstimate, PROB_FLOOR, SIGMA_FLOOR};
