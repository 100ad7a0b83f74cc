//! Relative p-capacities on uniform grids.

pub mod capsolve;
pub mod error;
pub mod grid;
pub mod io;
pub mod linalg;
pub mod potential;
pub mod propcheck;
pub mod sobolev;
mod solver;

pub use capsolve::{capacity, kkt_residual, Algorithm, CapacityResult, InitialGuess, SolverOptions};
pub use error::{Error, Result};
pub use grid::{DomainSpec, GridDomain, NodeSet, Selector, Shape};
pub use potential::{capacitary_measure, solve_potential, DiscreteMeasure, PotentialResult};
pub use sobolev::{GridFunction, PExponent};
pub use propcheck::{PropertyReport, TrialRecord, TrialStatus};
