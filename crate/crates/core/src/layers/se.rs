use rand::Rng;

use super::{check_channels, join, Chw, Forward, LayerCost, Linear};
use crate::error::Result;
use crate::params::ParamStore;
use crate::tensor::{Activation, Float, Var};

pub const SE_REDUCTION: usize = 16;

/// Squeeze-and-excitation: `x · sigmoid(W₂·ReLU(W₁·GAP(x)))` per channel.
#[derive(Clone, Debug)]
pub struct SEModule {
    pub name: String,
    pub channels: usize,
    pub hidden: usize,
    pub fc1: Linear,
    pub fc2: Linear,
    /// Forces the gate to 1 (test hook).
    pub bypass: bool,
}

impl SEModule {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        reduction: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let hidden = (channels / reduction.max(1)).max(1);
        Ok(Self {
            name: name.to_string(),
            channels,
            hidden,
            fc1: Linear::new(store, &join(name, "fc1"), channels, hidden, true, rng)?,
            fc2: Linear::new(store, &join(name, "fc2"), hidden, channels, true, rng)?,
            bypass: false,
        })
    }

    /// The per-channel gate `[batch, channels]`, each value in (0, 1).
    pub fn gate<T: Float>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let pooled = f.graph.global_avg_pool(x)?;
        let h = self.fc1.forward(f, pooled)?;
        let h = f.graph.activation(h, Activation::Relu)?;
        let s = self.fc2.forward(f, h)?;
        f.graph.sigmoid(s)
    }

    pub fn forward<T: Float>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        check_channels(&self.name, self.channels, f.graph.shape(x).get(1).copied().unwrap_or(0))?;
        if self.bypass {
            return Ok(x);
        }
        let s = self.gate(f, x)?;
        f.graph.scale_channels(x, s)
    }

    pub fn param_count(&self) -> u64 {
        self.fc1.param_count() + self.fc2.param_count()
    }

    pub fn costs(&self, input: Chw, out: &mut Vec<LayerCost>) -> Result<Chw> {
        check_channels(&self.name, self.channels, input[0])?;
        let macs = self.fc1.cost().macs + self.fc2.cost().macs;
        out.push(LayerCost::new(&self.name, "se", input, self.param_count(), macs));
        Ok(input)
    }
}
