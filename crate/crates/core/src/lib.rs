//! NEXcepTion network family built from scratch: tensors with reverse-mode
//! autodiff, the separable-convolution layers and blocks, exact builders for
//! the published variants with parameter/FLOP accounting, the training recipe
//! (LAMB, cosine warmup, Mixup/CutMix/RandAugment, BCE on soft targets), and a
//! budgeted architecture search with local hyperparameter importance.

pub mod arch;
pub mod data;
pub mod error;
pub mod layers;
pub mod nas;
pub mod params;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use params::{ParamId, ParamKind, ParamStore, Parameter};
pub use tensor::{Activation, BatchNormMode, DType, Float, Graph, Tensor, Var};
