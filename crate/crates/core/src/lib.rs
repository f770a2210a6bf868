//! Exact discrete-probability laboratory for backward doubly stochastic
//! (Volterra) integral equations on a two-noise binary scenario tree.
//!
//! Two independent noises W and B are modelled by exhaustive Rademacher
//! sign trees with increments `+-sqrt(dt)`, which makes expectations,
//! conditional expectations, Ito isometries and martingale representations
//! exact finite computations. On top of that sit a BDSDE solver (backward
//! recursion), solvers for backward doubly stochastic Volterra integral
//! equations with symmetrical-martingale completion of the two-parameter
//! process `Z` off the Volterra region, and the weighted-norm estimate and
//! contraction checks that certify the solutions.
//!
//! Atom-level kernels are data-parallel via rayon (default feature
//! `parallel`); disable default features for the sequential fallback.

pub mod bdsde;
pub mod bdsvie;
mod error;
pub mod integrals;
pub mod norms;
mod par;
pub mod probability;
pub mod representation;

pub use error::{Error, Result};
