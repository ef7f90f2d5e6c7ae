//! Excess-hazard survival modeling with spatially structured random effects.
//!
//! The model family decomposes all-cause mortality additively into a known
//! population hazard (from life tables) and a parametric excess hazard with
//! covariate effects on both the time scale and the hazard scale, plus
//! region-level random effects (IID, ICAR, or BYM2).  Inference is Bayesian
//! via Hamiltonian Monte Carlo; postprocessing produces net-survival curves,
//! exceedance probabilities, and PSIS-LOO model comparisons.  A matching
//! simulator generates synthetic registry-style datasets.
//!
//! The `exhaz` binary wires these pieces into a
//! simulate -> fit -> summarize -> compare pipeline; see the crate README.

pub mod baseline;
pub mod error;
pub mod hmc;
pub mod io;
pub mod lifetable;
pub mod model;
pub mod postprocess;
pub mod simulate;
pub mod spatial;
pub mod special;
pub mod spline;

pub use error::{Error, Result};
