//! Simulation and asymptotics for optimal trading under small proportional
//! transaction costs with exponential utility.
//!
//! The crate is organized around five building blocks:
//!
//! * [`sde`] — seed-reproducible Itô path simulation and local
//!   quadratic-variation estimation on discrete time grids.
//! * [`frictionless`] — frictionless optimizers, pricing measures, delta/gamma
//!   analytics and mean-variance hedges for the supported market models.
//! * [`asymptotics`] — leading-order no-trade band halfwidths, welfare losses,
//!   utility-indifference prices and their small-trade-size expansions.
//! * [`policy`] — exact accounting of the band-following trading policy,
//!   certainty equivalents and welfare experiments.
//! * [`shadow`] — construction of the candidate shadow price along simulated
//!   policy paths and statistical checks of its approximate optimality.

pub mod asymptotics;
pub mod error;
pub mod frictionless;
pub mod grid;
pub mod policy;
pub mod sde;
pub mod shadow;
pub mod stats;

pub use error::{Error, Result};
pub use grid::TimeGrid;
pub use sde::{CoefficientSeries, Measure, PathSet};
