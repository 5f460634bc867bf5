use serde::{Deserialize, Serialize};

use super::{check_channels, join, Chw, Forward, LayerCost};
use crate::error::Result;
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::tensor::{BatchNormMode, Float, Tensor, Var};

/// Exponential-moving-average factor for running statistics.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Batch,
    Layer,
}

/// Batch normalization with running mean/variance kept as non-trainable
/// parameters so that checkpoints and parameter totals include them.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub name: String,
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm2d {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            name: name.to_string(),
            channels,
            gamma: store.add(join(name, "weight"), Tensor::ones(&[channels]), ParamKind::Exempt)?,
            beta: store.add(join(name, "bias"), Tensor::zeros(&[channels]), ParamKind::Exempt)?,
            running_mean: store.add(join(name, "running_mean"), Tensor::zeros(&[channels]), ParamKind::Buffer)?,
            running_var: store.add(join(name, "running_var"), Tensor::ones(&[channels]), ParamKind::Buffer)?,
        })
    }

    /// Training mode uses batch statistics and updates the running averages;
    /// eval mode normalizes with the running averages.
    pub fn forward<T: Float>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        check_channels(&self.name, self.channels, f.graph.shape(x).get(1).copied().unwrap_or(0))?;
        let g = f.param(self.gamma)?;
        let b = f.param(self.beta)?;
        if f.training {
            let (y, stats) = f.graph.batch_norm(x, g, b, BatchNormMode::Batch)?;
            if let Some(stats) = stats {
                let m = T::of(BN_MOMENTUM);
                let keep = T::one() - m;
                let rm = f.params.get_mut(self.running_mean).value.data_mut();
                rm.iter_mut().zip(&stats.mean).for_each(|(r, &v)| *r = keep * *r + m * v);
                let rv = f.params.get_mut(self.running_var).value.data_mut();
                rv.iter_mut().zip(&stats.var).for_each(|(r, &v)| *r = keep * *r + m * v);
            }
            Ok(y)
        } else {
            let mean = f.params.value(self.running_mean).clone();
            let var = f.params.value(self.running_var).clone();
            let (y, _) = f.graph.batch_norm(
                x,
                g,
                b,
                BatchNormMode::Running {
                    mean: mean.data(),
                    var: var.data(),
                },
            )?;
            Ok(y)
        }
    }

    /// Scale and shift plus the two running-statistic buffers.
    pub fn param_count(&self) -> u64 {
        4 * self.channels as u64
    }
}

/// Layer normalization over channels at each spatial position.
#[derive(Clone, Debug)]
pub struct LayerNorm2d {
    pub name: String,
    pub channels: usize,
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm2d {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            name: name.to_string(),
            channels,
            gamma: store.add(join(name, "weight"), Tensor::ones(&[channels]), ParamKind::Exempt)?,
            beta: store.add(join(name, "bias"), Tensor::zeros(&[channels]), ParamKind::Exempt)?,
        })
    }

    pub fn forward<T: Float>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        check_channels(&self.name, self.channels, f.graph.shape(x).get(1).copied().unwrap_or(0))?;
        let g = f.param(self.gamma)?;
        let b = f.param(self.beta)?;
        f.graph.layer_norm(x, g, b)
    }

    pub fn param_count(&self) -> u64 {
        2 * self.channels as u64
    }
}

#[derive(Clone, Debug)]
pub enum Norm {
    Batch(BatchNorm2d),
    Layer(LayerNorm2d),
}

impl Norm {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, kind: NormKind, channels: usize) -> Result<Self> {
        Ok(match kind {
            NormKind::Batch => Norm::Batch(BatchNorm2d::new(store, name, channels)?),
            NormKind::Layer => Norm::Layer(LayerNorm2d::new(store, name, channels)?),
        })
    }

    pub fn forward<T: Float>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        match self {
            Norm::Batch(n) => n.forward(f, x),
            Norm::Layer(n) => n.forward(f, x),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            Norm::Batch(n) => &n.name,
            Norm::Layer(n) => &n.name,
        }
    }

    pub fn param_count(&self) -> u64 {
        match self {
            Norm::Batch(n) => n.param_count(),
            Norm::Layer(n) => n.param_count(),
        }
    }

    /// Normalizations are counted as zero multiply-accumulates.
    pub fn costs(&self, input: Chw, out: &mut Vec<LayerCost>) -> Result<Chw> {
        let kind = match self {
            Norm::Batch(_) => "batch_norm",
            Norm::Layer(_) => "layer_norm",
        };
        out.push(LayerCost::new(self.name(), kind, input, self.param_count(), 0));
        Ok(input)
    }
}
