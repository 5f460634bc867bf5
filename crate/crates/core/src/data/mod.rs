//! Dataset ingestion, the checkpoint container and metrics files.

pub mod checkpoint;
pub mod cifar;
pub mod dataset;
pub mod metrics;
pub mod synthetic;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, read_manifest, save_checkpoint, Manifest, TensorEntry};
pub use cifar::{load_cifar, parse_cifar, write_cifar, CifarVariant};
pub use dataset::{Dataset, Normalization};
pub use metrics::{read_metrics_csv, write_json, write_metrics_csv, EpochMetrics};
pub use synthetic::{synthetic_dataset, SyntheticSpec};
