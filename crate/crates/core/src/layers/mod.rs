//! Composite layers: convolutions (standard, depthwise, separable), norms,
//! squeeze-and-excitation, pooling (including anti-aliased max-blur pooling),
//! stems and stochastic depth.
//!
//! A layer owns only [`ParamId`](crate::ParamId)s; values live in the
//! model's [`ParamStore`]. `forward` appends to the tape held by a
//! [`Forward`] context. `costs` walks the same structure symbolically and
//! reports per-layer parameters and multiply-accumulates without running it.

mod conv;
mod norm;
mod pool;
mod se;
mod stem;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use conv::{Conv2d, ConvSpec, Linear, SeparableConv};
pub use norm::{BatchNorm2d, LayerNorm2d, Norm, NormKind, BN_MOMENTUM};
pub use pool::{blur_kernel, MaxBlurPool, MaxPool2d};
pub use se::{SEModule, SE_REDUCTION};
pub use stem::{Stem, StemKind};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Float, Graph, Var};

/// `[channels, height, width]` of one sample.
pub type Chw = [usize; 3];

/// One row of a cost table.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub kind: String,
    pub out_shape: Chw,
    pub params: u64,
    /// Multiply-accumulates for one sample.
    pub macs: u64,
}

impl LayerCost {
    pub(crate) fn new(name: &str, kind: &str, out_shape: Chw, params: u64, macs: u64) -> Self {
        Self {
            name: name.to_string(),
            kind: kind.to_string(),
            out_shape,
            params,
            macs,
        }
    }
}

/// Forward-pass context: the tape, the parameters and the train/eval switch.
pub struct Forward<'a, T: Float> {
    pub graph: Graph<T>,
    pub params: &'a mut ParamStore<T>,
    pub training: bool,
    pub rng: &'a mut ChaCha8Rng,
}

impl<'a, T: Float> Forward<'a, T> {
    pub fn new(params: &'a mut ParamStore<T>, training: bool, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            graph: Graph::new(),
            params,
            training,
            rng,
        }
    }

    /// A context whose tape keeps nothing for backward.
    pub fn inference(params: &'a mut ParamStore<T>, rng: &'a mut ChaCha8Rng) -> Self {
        Self {
            graph: Graph::no_grad(),
            params,
            training: false,
            rng,
        }
    }

    pub fn param(&mut self, id: ParamId) -> Result<Var> {
        self.graph.param(self.params, id)
    }
}

/// Per-sample scaling factors for stochastic depth: each sample's branch is
/// dropped (factor 0) with probability `p`, otherwise rescaled by `1/(1−p)`.
pub fn drop_path_factors(batch: usize, p: f64, rng: &mut impl Rng) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config(format!("stochastic depth probability {p} must lie in [0, 1)")));
    }
    let keep = 1.0 - p;
    Ok((0..batch)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { 1.0 / keep })
        .collect())
}

/// Residual-branch stochastic depth. Identity in eval mode and at `p = 0`.
pub fn stochastic_depth<T: Float>(
    graph: &mut Graph<T>,
    branch: Var,
    p: f64,
    training: bool,
    rng: &mut impl Rng,
) -> Result<Var> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config(format!("stochastic depth probability {p} must lie in [0, 1)")));
    }
    if !training || p == 0.0 {
        return Ok(branch);
    }
    let batch = graph.shape(branch)[0];
    let factors: Vec<T> = drop_path_factors(batch, p, rng)?.into_iter().map(T::of).collect();
    graph.scale_samples(branch, &factors)
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

pub(crate) fn check_channels(layer: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::config(format!(
            "{layer}: expected {expected} input channels, got {got}"
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn drop_path_rejects_certain_drop() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(drop_path_factors(4, 1.0, &mut rng).is_err());
        assert!(drop_path_factors(4, -0.1, &mut rng).is_err());
    }

    #[test]
    fn zero_probability_keeps_branch_unscaled() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = drop_path_factors(100, 0.0, &mut rng).unwrap();
        assert!(f.iter().all(|&v| v == 1.0));
    }
}
