use rand::Rng;

use super::config::{ActPosition, ArchConfig, NormPosition, PoolKind};
use crate::error::Result;
use crate::layers::{
    check_channels, join, stochastic_depth, Chw, Conv2d, ConvSpec, Forward, LayerCost, Linear, MaxBlurPool, MaxPool2d,
    Norm, NormKind, SEModule, SeparableConv, SE_REDUCTION,
};
use crate::params::ParamStore;
use crate::tensor::{Activation, Float, Var};

/// Where normalizations and activations sit inside a chain of separable
/// convolutions. When both land on the same point the norm comes first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Placement {
    pub norm_kind: NormKind,
    pub norm_position: NormPosition,
    pub act_kind: Activation,
    pub act_position: ActPosition,
}

impl Placement {
    pub fn from_config(c: &ArchConfig) -> Self {
        Self {
            norm_kind: c.norm_kind,
            norm_position: c.norm_position,
            act_kind: c.act_kind,
            act_position: c.act_position,
        }
    }

    fn norm_after(&self, i: usize, last: usize) -> bool {
        match self.norm_position {
            NormPosition::AfterFirstConv => i == 0,
            NormPosition::AfterAllConvs => true,
            NormPosition::PreBlock => false,
            NormPosition::PostBlock => i == last,
        }
    }

    fn act_after(&self, i: usize) -> bool {
        match self.act_position {
            ActPosition::AfterExpandOnly => i == 0,
            ActPosition::AfterAllConvs => true,
            ActPosition::PreBlock | ActPosition::None => false,
        }
    }
}

#[derive(Clone, Debug)]
struct Step {
    sep: SeparableConv,
    norm: Option<Norm>,
    act: Option<Activation>,
}

/// Stride-1 separable convolutions through the channel widths `widths`,
/// with norms and activations placed per [`Placement`].
#[derive(Clone, Debug)]
pub struct SepChain {
    pub name: String,
    pre_norm: Option<Norm>,
    pre_act: Option<Activation>,
    steps: Vec<Step>,
}

impl SepChain {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        widths: &[usize],
        kernel: usize,
        place: Placement,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let pre_norm = match place.norm_position {
            NormPosition::PreBlock => Some(Norm::new(store, &join(name, "pre_norm"), place.norm_kind, widths[0])?),
            _ => None,
        };
        let pre_act = (place.act_position == ActPosition::PreBlock).then_some(place.act_kind);
        let last = widths.len() - 2;
        let mut steps = Vec::with_capacity(last + 1);
        for (i, pair) in widths.windows(2).enumerate() {
            let normed = place.norm_after(i, last);
            let sep = SeparableConv::new(store, &join(name, &format!("sep{}", i + 1)), pair[0], pair[1], kernel, 1, !normed, rng)?;
            let norm = if normed {
                Some(Norm::new(store, &join(name, &format!("norm{}", i + 1)), place.norm_kind, pair[1])?)
            } else {
                None
            };
            steps.push(Step {
                sep,
                norm,
                act: place.act_after(i).then_some(place.act_kind),
            });
        }
        Ok(Self {
            name: name.to_string(),
            pre_norm,
            pre_act,
            steps,
        })
    }

    pub fn forward<T: Float>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let mut y = x;
        if let Some(n) = &self.pre_norm {
            y = n.forward(f, y)?;
        }
        if let Some(a) = self.pre_act {
            y = f.graph.activation(y, a)?;
        }
        for s in &self.steps {
            y = s.sep.forward(f, y)?;
            if let Some(n) = &s.norm {
                y = n.forward(f, y)?;
            }
            if let Some(a) = s.act {
                y = f.graph.activation(y, a)?;
            }
        }
        Ok(y)
    }

    pub fn costs(&self, input: Chw, out: &mut Vec<LayerCost>) -> Result<Chw> {
        let mut s = input;
        if let Some(n) = &self.pre_norm {
            s = n.costs(s, out)?;
        }
        for step in &self.steps {
            s = step.sep.costs(s, out)?;
            if let Some(n) = &step.norm {
                s = n.costs(s, out)?;
            }
        }
        Ok(s)
    }
}

/// The residual block of the middle flow:
/// `x + drop_path(SE(sep(C→eC) · sep(eC→C) · sep(C→C)))`.
#[derive(Clone, Debug)]
pub struct NexBlock {
    pub name: String,
    pub channels: usize,
    pub expansion: usize,
    pub chain: SepChain,
    pub se: Option<SEModule>,
}

impl NexBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        expansion: usize,
        kernel: usize,
        place: Placement,
        se: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let wide = channels * expansion;
        let chain = SepChain::new(store, name, &[channels, wide, channels, channels], kernel, place, rng)?;
        let se = if se {
            Some(SEModule::new(store, &join(name, "se"), channels, SE_REDUCTION, rng)?)
        } else {
            None
        };
        Ok(Self {
            name: name.to_string(),
            channels,
            expansion,
            chain,
            se,
        })
    }

    pub fn forward<T: Float>(&self, f: &mut Forward<'_, T>, x: Var, drop_path: f64) -> Result<Var> {
        check_channels(&self.name, self.channels, f.graph.shape(x)[1])?;
        let mut branch = self.chain.forward(f, x)?;
        if let Some(se) = &self.se {
            branch = se.forward(f, branch)?;
        }
        let branch = stochastic_depth(&mut f.graph, branch, drop_path, f.training, f.rng)?;
        f.graph.add(x, branch)
    }

    pub fn costs(&self, input: Chw, out: &mut Vec<LayerCost>) -> Result<Chw> {
        check_channels(&self.name, self.channels, input[0])?;
        let s = self.chain.costs(input, out)?;
        match &self.se {
            Some(se) => se.costs(s, out),
            None => Ok(s),
        }
    }
}

#[derive(Clone, Debug)]
pub enum DownPool {
    Max(MaxPool2d),
    Blur(MaxBlurPool),
    /// Learnable depthwise 3×3 convolution at stride 2.
    Strided(Conv2d),
}

impl DownPool {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        kind: PoolKind,
        channels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(match kind {
            PoolKind::MaxPool => DownPool::Max(MaxPool2d::downsample(name)),
            PoolKind::BlurPool => DownPool::Blur(MaxBlurPool::new(name, channels)),
            PoolKind::StridedConv => DownPool::Strided(Conv2d::new(
                store,
                name,
                ConvSpec::same(channels, channels, 3, 2).with_groups(channels),
                rng,
            )?),
        })
    }

    pub fn forward<T: Float>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        match self {
            DownPool::Max(p) => p.forward(f, x),
            DownPool::Blur(p) => p.forward(f, x),
            DownPool::Strided(c) => c.forward(f, x),
        }
    }

    pub fn costs(&self, input: Chw, out: &mut Vec<LayerCost>) -> Result<Chw> {
        match self {
            DownPool::Max(p) => p.costs(input, out),
            DownPool::Blur(p) => p.costs(input, out),
            DownPool::Strided(c) => c.costs(input, out),
        }
    }
}

/// Halves resolution: `SE(pool(sep(in→mid) · sep(mid→out))) + norm(conv1×1/2(x))`.
/// Entry-flow blocks widen in the first convolution (`mid = out`), the
/// exit-flow block in the second (`mid = in`).
#[derive(Clone, Debug)]
pub struct DownsampleBlock {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub chain: SepChain,
    pub pool: DownPool,
    pub se: Option<SEModule>,
    pub shortcut: Conv2d,
    pub shortcut_norm: Norm,
}

impl DownsampleBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        mid_ch: usize,
        out_ch: usize,
        kernel: usize,
        place: Placement,
        pool: PoolKind,
        se: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let chain = SepChain::new(store, name, &[in_ch, mid_ch, out_ch], kernel, place, rng)?;
        let pool = DownPool::new(store, &join(name, "pool"), pool, out_ch, rng)?;
        let se = if se {
            Some(SEModule::new(store, &join(name, "se"), out_ch, SE_REDUCTION, rng)?)
        } else {
            None
        };
        let shortcut = Conv2d::new(store, &join(name, "shortcut.conv"), ConvSpec::same(in_ch, out_ch, 1, 2), rng)?;
        let shortcut_norm = Norm::new(store, &join(name, "shortcut.norm"), place.norm_kind, out_ch)?;
        Ok(Self {
            name: name.to_string(),
            in_ch,
            out_ch,
            chain,
            pool,
            se,
            shortcut,
            shortcut_norm,
        })
    }

    pub fn forward<T: Float>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        check_channels(&self.name, self.in_ch, f.graph.shape(x)[1])?;
        let mut branch = self.chain.forward(f, x)?;
        branch = self.pool.forward(f, branch)?;
        if let Some(se) = &self.se {
            branch = se.forward(f, branch)?;
        }
        let sc = self.shortcut_forward(f, x)?;
        f.graph.add(branch, sc)
    }

    /// The projection path alone: `norm(conv1×1/2(x))`.
    pub fn shortcut_forward<T: Float>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let sc = self.shortcut.forward(f, x)?;
        self.shortcut_norm.forward(f, sc)
    }

    pub fn costs(&self, input: Chw, out: &mut Vec<LayerCost>) -> Result<Chw> {
        check_channels(&self.name, self.in_ch, input[0])?;
        let s = self.chain.costs(input, out)?;
        let s = self.pool.costs(s, out)?;
        let s = match &self.se {
            Some(se) => se.costs(s, out)?,
            None => s,
        };
        let sc = self.shortcut.costs(input, out)?;
        let sc = self.shortcut_norm.costs(sc, out)?;
        debug_assert_eq!(s, sc);
        Ok(s)
    }
}

#[derive(Clone, Debug)]
struct XceptionUnit {
    pre_act: bool,
    sep: SeparableConv,
    norm: Norm,
}

/// A block of the original baseline: `[ReLU] → sep → BN` units, an optional
/// stride-2 max pool, and a residual that is the identity or a strided 1×1
/// projection.
#[derive(Clone, Debug)]
pub struct XceptionBlock {
    pub name: String,
    pub in_ch: usize,
    units: Vec<XceptionUnit>,
    pool: Option<MaxPool2d>,
    shortcut: Option<(Conv2d, Norm)>,
}

impl XceptionBlock {
    /// `widths` are the unit output channels; `pre_act[i]` places a ReLU
    /// before unit `i`.
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        widths: &[usize],
        pre_act: &[bool],
        downsample: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut units = Vec::with_capacity(widths.len());
        let mut c = in_ch;
        for (i, (&w, &act)) in widths.iter().zip(pre_act).enumerate() {
            units.push(XceptionUnit {
                pre_act: act,
                sep: SeparableConv::new(store, &join(name, &format!("sep{}", i + 1)), c, w, 3, 1, false, rng)?,
                norm: Norm::new(store, &join(name, &format!("norm{}", i + 1)), NormKind::Batch, w)?,
            });
            c = w;
        }
        let (pool, shortcut) = if downsample {
            let conv = Conv2d::new(store, &join(name, "shortcut.conv"), ConvSpec::same(in_ch, c, 1, 2), rng)?;
            let norm = Norm::new(store, &join(name, "shortcut.norm"), NormKind::Batch, c)?;
            (Some(MaxPool2d::downsample(&join(name, "pool"))), Some((conv, norm)))
        } else {
            (None, None)
        };
        Ok(Self {
            name: name.to_string(),
            in_ch,
            units,
            pool,
            shortcut,
        })
    }

    pub fn forward<T: Float>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        check_channels(&self.name, self.in_ch, f.graph.shape(x)[1])?;
        let mut y = x;
        for u in &self.units {
            if u.pre_act {
                y = f.graph.activation(y, Activation::Relu)?;
            }
            y = u.sep.forward(f, y)?;
            y = u.norm.forward(f, y)?;
        }
        if let Some(p) = &self.pool {
            y = p.forward(f, y)?;
        }
        let sc = match &self.shortcut {
            Some((conv, norm)) => {
                let s = conv.forward(f, x)?;
                norm.forward(f, s)?
            }
            None => x,
        };
        f.graph.add(y, sc)
    }

    pub fn costs(&self, input: Chw, out: &mut Vec<LayerCost>) -> Result<Chw> {
        check_channels(&self.name, self.in_ch, input[0])?;
        let mut s = input;
        for u in &self.units {
            s = u.sep.costs(s, out)?;
            s = u.norm.costs(s, out)?;
        }
        if let Some(p) = &self.pool {
            s = p.costs(s, out)?;
        }
        if let Some((conv, norm)) = &self.shortcut {
            let sc = conv.costs(input, out)?;
            norm.costs(sc, out)?;
        }
        Ok(s)
    }
}

/// Separable convolution followed by norm and activation (exit-flow tail).
#[derive(Clone, Debug)]
pub struct SepNormAct {
    pub sep: SeparableConv,
    pub norm: Norm,
    pub act: Activation,
}

impl SepNormAct {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        norm: NormKind,
        act: Activation,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            sep: SeparableConv::new(store, &join(name, "sep"), in_ch, out_ch, kernel, 1, false, rng)?,
            norm: Norm::new(store, &join(name, "norm"), norm, out_ch)?,
            act,
        })
    }

    pub fn forward<T: Float>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let y = self.sep.forward(f, x)?;
        let y = self.norm.forward(f, y)?;
        f.graph.activation(y, self.act)
    }

    pub fn costs(&self, input: Chw, out: &mut Vec<LayerCost>) -> Result<Chw> {
        let s = self.sep.costs(input, out)?;
        self.norm.costs(s, out)
    }
}

/// Between-stage downsampling of the pyramid variant: norm, then a 2×2
/// stride-2 convolution with bias.
#[derive(Clone, Debug)]
pub struct Transition {
    pub norm: Norm,
    pub conv: Conv2d,
}

impl Transition {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        norm: NormKind,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let spec = ConvSpec::same(in_ch, out_ch, 2, 2).with_padding(0).with_bias(true);
        Ok(Self {
            norm: Norm::new(store, &join(name, "norm"), norm, in_ch)?,
            conv: Conv2d::new(store, &join(name, "conv"), spec, rng)?,
        })
    }

    pub fn forward<T: Float>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let y = self.norm.forward(f, x)?;
        self.conv.forward(f, y)
    }

    pub fn costs(&self, input: Chw, out: &mut Vec<LayerCost>) -> Result<Chw> {
        let s = self.norm.costs(input, out)?;
        self.conv.costs(s, out)
    }
}

/// Global average pooling, an optional norm on the pooled vector, and one
/// fully connected layer.
#[derive(Clone, Debug)]
pub struct Head {
    pub name: String,
    pub norm: Option<Norm>,
    pub fc: Linear,
}

impl Head {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        channels: usize,
        classes: usize,
        norm: Option<NormKind>,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let norm = norm.map(|k| Norm::new(store, &join(name, "norm"), k, channels)).transpose()?;
        Ok(Self {
            name: name.to_string(),
            norm,
            fc: Linear::new(store, &join(name, "fc"), channels, classes, true, rng)?,
        })
    }

    pub fn forward<T: Float>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let mut y = f.graph.global_avg_pool(x)?;
        if let Some(n) = &self.norm {
            let [b, c] = [f.graph.shape(y)[0], f.graph.shape(y)[1]];
            let y4 = f.graph.reshape(y, &[b, c, 1, 1])?;
            let y4 = n.forward(f, y4)?;
            y = f.graph.reshape(y4, &[b, c])?;
        }
        self.fc.forward(f, y)
    }

    pub fn costs(&self, input: Chw, out: &mut Vec<LayerCost>) -> Result<Chw> {
        check_channels(&self.name, self.fc.in_features, input[0])?;
        let pooled = [input[0], 1, 1];
        out.push(LayerCost::new(&join(&self.name, "pool"), "global_avg_pool", pooled, 0, 0));
        if let Some(n) = &self.norm {
            n.costs(pooled, out)?;
        }
        let fc = self.fc.cost();
        let shape = fc.out_shape;
        out.push(fc);
        Ok(shape)
    }
}
