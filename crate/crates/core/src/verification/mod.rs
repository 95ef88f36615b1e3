pub mod desk;
pub mod gradients;
mod naive;
pub mod oracles;

pub use desk::{run_desk_experiment, spearman, DeskConfig, DeskReport};
pub use gradients::{run_gradient_suite, GRADIENT_EXCLUDED};
pub use oracles::{run_oracle_suite, run_oracles, Oracle, OracleReport, Tolerance, OPERATIONS};
