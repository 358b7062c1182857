//! Training loop, evaluation, negative sampling and ablations.

pub mod ablation;
pub mod metrics;
pub mod negative;
mod trainer;

pub use ablation::{run_ablation, AblationReport, AblationRow, Variant};
pub use metrics::{average_precision, EpochMetrics, MetricsReport};
pub use negative::negative_sample;
pub use trainer::{EvalSummary, Experiment, FitResult, LossParts, LossWeights, Part, Scored, TrainConfig, Trainer};
