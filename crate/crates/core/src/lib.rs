//! Adaptive multilevel Monte Carlo approximation of distribution functions.
//!
//! The distribution function `F` of a scalar random variable `Y` is
//! approximated on a compact interval `[S0, S1]` from coupled samples of
//! approximations `Y^(l)`. The pipeline is:
//!
//! 1. smoothed indicators `g((t - s_j) / delta)` on an equidistant knot grid
//!    ([`kernel`]),
//! 2. a vector-valued multilevel estimator with a cost ledger ([`mlmc`]),
//! 3. blockwise polynomial interpolation with a two-stage monotonicity
//!    correction ([`interp`]),
//! 4. an adaptive controller choosing knots, smoothing width, finest level
//!    and replication numbers for a target root mean squared error
//!    ([`adaptive`]).
//!
//! [`sde`] provides Milstein samplers for geometric Brownian motion with
//! closed-form reference distribution functions, [`bench`] the experiment
//! drivers behind the command-line harness, and [`theory`] the complexity
//! exponent calculator.

pub mod adaptive;
pub mod bench;
pub mod error;
pub mod interp;
pub mod kernel;
pub mod mlmc;
pub mod poly;
pub mod quad;
pub mod rng;
pub mod sde;
pub mod stats;
pub mod theory;

pub use adaptive::{AccuracyBudget, AdaptiveConfig, RunReport};
pub use error::{Error, Result};
pub use interp::{KnotGrid, MonotoneCdf, PiecewisePolynomial};
pub use kernel::{SmoothedIndicatorGrid, SmoothingPolynomial};
pub use mlmc::{CostLedger, CoupledSampler, LevelState};
pub use sde::{FunctionalKind, GbmParams, GbmSampler};
