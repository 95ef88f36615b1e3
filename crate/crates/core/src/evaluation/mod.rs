pub mod matrix;
pub mod metrics;
pub mod scatter;

pub use matrix::{cross_domain_matrix, evaluate_dataset, CrossDomainMatrix, Loaded, MatrixCell, NamedCheckpoint};
pub use metrics::{d1, epe, evaluate, evaluate_tally, ErrorTally, MetricResult};
pub use scatter::{emit_scatter, pair_results, read_scatter_csv, ScatterPoint, ScatterReport, TrainedResult};
