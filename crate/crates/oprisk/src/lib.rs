//! Off-policy estimation of the cumulative distribution function of returns
//! in finite-horizon tabular MDPs, with plug-in risk functionals.
//!
//! The crate is organised around a single pipeline:
//!
//! 1. [`mdp`] defines finite MDPs, policies, trajectory sampling, and
//!    importance weights; [`envs`] builds the benchmark environments.
//! 2. [`stepfn`] provides exact arithmetic on right-continuous step
//!    functions, the common representation of every CDF estimate.
//! 3. [`model`] learns an empirical MDP from data and runs the CDF Bellman
//!    recursion to obtain model return distributions.
//! 4. [`estimators`] implements the off-policy CDF estimators
//!    (importance sampling and its variants, direct method, doubly robust)
//!    together with empirical-Bernstein confidence bands.
//! 5. [`risk`] evaluates distortion/CPT/variance risk functionals on step
//!    CDFs and assembles simultaneous risk reports.
//! 6. [`oracle`] computes exact ground truth by trajectory enumeration:
//!    estimator moments, mean squared weights, and the Cramer-Rao bound.
//! 7. [`harness`] orchestrates reproducible experiment sweeps and the CLI.

pub mod envs;
pub mod estimators;
pub mod harness;
pub mod mdp;
pub mod model;
pub mod oracle;
pub mod risk;
pub mod stepfn;
