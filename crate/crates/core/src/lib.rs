//! Mirror descent-ascent for min-max games over discretized probability
//! measures.
//!
//! The crate is organised bottom-up:
//!
//! * [`measures`]: strategy grids, discrete measures and grid functions;
//! * [`geometry`]: Bregman geometries, mirror steps and convex conjugates;
//! * [`payoffs`]: payoff functionals and their smoothness constants;
//! * [`solvers`]: simultaneous, sequential and implicit MDA;
//! * [`diagnostics`]: Nikaidò-Isoda errors, bound checks and rate fits.

pub mod diagnostics;
pub mod error;
pub mod geometry;
pub mod measures;
pub mod payoffs;
pub mod solvers;

pub use error::{MdaError, Result};
pub use geometry::{BregmanGeometry, Direction, DualLipschitzConstants, DualPotential, GeometryKind, Phi};
pub use measures::{DiscreteMeasure, GridFunction, StrategyGrid};
pub use payoffs::{
    analytic_constants, BilinearPayoff, DenseMatrix, Payoff, PayoffConstants, PayoffStructure,
    RegularizedBilinearPayoff,
};
pub use solvers::{
    d0_bound, run, run_implicit, run_observed, run_sequential, run_simultaneous, theoretical_stepsize,
    Geometries, IterateTrace, Scheme, SolverConfig, StepObserver, StepRecord, StepSummary, StepView,
};
