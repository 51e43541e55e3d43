//! Steady compressible Navier–Stokes flow through a rectangular cylinder with
//! Navier slip walls and a prescribed inflow density, solved as a small
//! perturbation of the constant flow `v = (1, 0, 0)`, `ρ = 1`.
//!
//! The solver is a Picard iteration: each step solves a linear Lamé system with
//! Robin slip rows coupled to a steady transport equation for the density
//! perturbation, the latter handled by backward characteristics.

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod field;
pub mod grid;
pub mod krylov;
pub mod lame;
pub mod material;
pub mod norm;
pub mod output;
pub mod picard;
pub mod runner;
pub mod study;
pub mod transport;

pub use error::{Error, Result};
