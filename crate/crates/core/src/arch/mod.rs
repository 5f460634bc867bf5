pub mod blocks;
pub mod builders;
pub mod config;
pub mod cost;
pub mod model;

pub use blocks::{DownPool, DownsampleBlock, Head, NexBlock, Placement, SepChain, SepNormAct, Transition, XceptionBlock};
pub use builders::{build, build_variant, minimal_config};
pub use config::{ActPosition, ArchConfig, Bottleneck, Dimension, NormPosition, PoolKind, DIMENSION_NAMES, KERNEL_SIZES};
pub use cost::{count_flops, count_params, CostReport};
pub use model::{ArchSpec, Layer, ModelGraph, Network, Stage, StageShape, Variant};
