//! Simulation of one-dimensional McKean–Vlasov particle systems and nonparametric
//! estimation of the interaction force `W'` from a single observed trajectory.

pub mod contrast;
pub mod deconvolution;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod invariant;
pub mod kernel_estimators;
pub mod particle_sim;
pub mod potentials;

pub use error::{Error, Result};
pub use grid::{Grid, GridFunction};
pub use invariant::{GridDensity, SolverOptions};
pub use potentials::{builtin_model, PotentialModel};
