//! Architecture search over [`ArchConfig`](crate::arch::ArchConfig): the
//! space, trial objectives, random and surrogate-guided search, and local
//! hyperparameter importance.

pub mod lpi;
pub mod search;
pub mod space;
pub mod surrogate;
pub mod trial;

pub use lpi::{lpi_importance, DimensionImportance, LpiReport};
pub use search::{incumbent_index, incumbent_trace, search, Budget, SearchOptions, SearchOutcome, Strategy};
pub use space::{encoding_width, one_hot, SearchSpace};
pub use surrogate::{expected_improvement, ForestParams, RandomForest};
pub use trial::{read_history, write_history, Objective, PlantedObjective, TrainingObjective, TrialRecord};
