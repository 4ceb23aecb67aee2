//! Seeded convergence studies, persistence and reporting.

pub mod config;
pub mod persist;
pub mod rate;
pub mod report;
pub mod study;

pub use config::{C1Source, ExperimentConfig, HorizonRule, ModelSpec};
pub use persist::{load, persist};
pub use rate::{fit_rate, RateFit};
pub use report::{report, Report};
pub use study::{cell_seed, run_convergence_study, CellResult, ExperimentResult, StudySummary, SCHEMA_VERSION};
