use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{join, Chw, Conv2d, ConvSpec, Forward, LayerCost, Norm, NormKind};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Activation, Float, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StemKind {
    /// Two 3×3 convolutions, the first at stride 2.
    ConvStem,
    /// Non-overlapping 2×2 stride-2 convolution.
    #[serde(rename = "patchify2x2")]
    Patchify2x2,
}

#[derive(Clone, Debug)]
pub enum Stem {
    Conv {
        name: String,
        conv1: Conv2d,
        norm1: Norm,
        conv2: Conv2d,
        norm2: Norm,
        act: Activation,
    },
    Patchify {
        name: String,
        patch: usize,
        conv: Conv2d,
        norm: Norm,
    },
}

impl Stem {
    /// conv 3×3 s2 → norm → act → conv 3×3 s1 → norm → act.
    #[allow(clippy::too_many_arguments)]
    pub fn conv<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        mid_ch: usize,
        out_ch: usize,
        norm: NormKind,
        act: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Stem::Conv {
            name: name.to_string(),
            conv1: Conv2d::new(store, &join(name, "conv1"), ConvSpec::same(in_ch, mid_ch, 3, 2), rng)?,
            norm1: Norm::new(store, &join(name, "norm1"), norm, mid_ch)?,
            conv2: Conv2d::new(store, &join(name, "conv2"), ConvSpec::same(mid_ch, out_ch, 3, 1), rng)?,
            norm2: Norm::new(store, &join(name, "norm2"), norm, out_ch)?,
            act,
        })
    }

    /// A `patch×patch` stride-`patch` convolution with bias, then norm.
    pub fn patchify<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        patch: usize,
        norm: NormKind,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let spec = ConvSpec {
            in_ch,
            out_ch,
            kernel: patch,
            stride: patch,
            padding: 0,
            groups: 1,
            bias: true,
        };
        Ok(Stem::Patchify {
            name: name.to_string(),
            patch,
            conv: Conv2d::new(store, &join(name, "conv"), spec, rng)?,
            norm: Norm::new(store, &join(name, "norm"), norm, out_ch)?,
        })
    }

    pub fn out_channels(&self) -> usize {
        match self {
            Stem::Conv { conv2, .. } => conv2.spec.out_ch,
            Stem::Patchify { conv, .. } => conv.spec.out_ch,
        }
    }

    fn check_patch(&self, h: usize, w: usize) -> Result<()> {
        if let Stem::Patchify { name, patch, .. } = self {
            if h % patch != 0 || w % patch != 0 {
                return Err(Error::config(format!(
                    "{name}: input {h}x{w} is not divisible into non-overlapping {patch}x{patch} patches"
                )));
            }
        }
        Ok(())
    }

    pub fn forward<T: Float>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let [_, _, h, w] = f.graph.value(x).dims4()?;
        self.check_patch(h, w)?;
        match self {
            Stem::Conv {
                conv1,
                norm1,
                conv2,
                norm2,
                act,
                ..
            } => {
                let y = conv1.forward(f, x)?;
                let y = norm1.forward(f, y)?;
                let y = f.graph.activation(y, *act)?;
                let y = conv2.forward(f, y)?;
                let y = norm2.forward(f, y)?;
                f.graph.activation(y, *act)
            }
            Stem::Patchify { conv, norm, .. } => {
                let y = conv.forward(f, x)?;
                norm.forward(f, y)
            }
        }
    }

    pub fn costs(&self, input: Chw, out: &mut Vec<LayerCost>) -> Result<Chw> {
        self.check_patch(input[1], input[2])?;
        match self {
            Stem::Conv {
                conv1,
                norm1,
                conv2,
                norm2,
                ..
            } => {
                let s = conv1.costs(input, out)?;
                let s = norm1.costs(s, out)?;
                let s = conv2.costs(s, out)?;
                norm2.costs(s, out)
            }
            Stem::Patchify { conv, norm, .. } => {
                let s = conv.costs(input, out)?;
                norm.costs(s, out)
            }
        }
    }
}
