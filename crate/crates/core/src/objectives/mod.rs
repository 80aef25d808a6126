//! Training objectives, the assembled model and its staged training.

pub mod chain_rule;
pub mod losses;
pub mod model;
pub mod train;
pub mod variant;

pub use losses::{LossWeights, RecTerms, TrajectoryRecord};
pub use model::{BaseModel, Inference, Model, ModelConfig, TrainingConfig};
pub use train::{train_base, train_variant, training_views, untrained_base, EpochLog, TrainLog};
pub use variant::{ClassifierInput, Consistency, EvidenceSource, PlanSource, Variant};
