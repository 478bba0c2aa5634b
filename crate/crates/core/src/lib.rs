//! Optimal switching between finitely many operating modes of a
//! one-dimensional diffusion: model validation, path simulation, lattice
//! dynamic programming, a finite-difference solver for the coupled obstacle
//! system, and Monte Carlo execution of the resulting policy.

pub mod cli;
pub mod dp_oracle;
pub mod model;
pub mod pde;
pub mod sde;
pub mod strategy;
