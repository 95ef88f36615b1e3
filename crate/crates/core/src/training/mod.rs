pub mod checkpoint;
pub mod config;
pub mod consistency;
pub mod objective;
pub mod trainer;

pub use config::{LrSchedule, Manner, TrainConfig};
pub use consistency::{consistency_criterion, early_stop_step, ConsistencySeries, StopDecision, ValidationSet};
pub use checkpoint::{pretrain_load, Checkpoint};
pub use trainer::{split_holdout, train, EpochRecord, TrainReport};
