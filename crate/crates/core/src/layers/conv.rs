use rand::Rng;

use super::{check_channels, join, Chw, Forward, LayerCost};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamKind, ParamStore};
use crate::tensor::kernels::out_extent;
use crate::tensor::{Float, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub bias: bool,
}

impl ConvSpec {
    /// Square kernel, padding `(k−1)/2`, no groups, no bias.
    pub fn same(in_ch: usize, out_ch: usize, kernel: usize, stride: usize) -> Self {
        Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding: (kernel - 1) / 2,
            groups: 1,
            bias: false,
        }
    }

    pub fn with_bias(mut self, bias: bool) -> Self {
        self.bias = bias;
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = padding;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.in_ch == 0 || self.out_ch == 0 || self.kernel == 0 || self.stride == 0 || self.groups == 0 {
            return Err(Error::config(format!("degenerate convolution {self:?}")));
        }
        if self.in_ch % self.groups != 0 || self.out_ch % self.groups != 0 {
            return Err(Error::config(format!(
                "channels in={} out={} not divisible by groups={}",
                self.in_ch, self.out_ch, self.groups
            )));
        }
        Ok(())
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [self.out_ch, self.in_ch / self.groups, self.kernel, self.kernel]
    }

    pub fn param_count(&self) -> u64 {
        let w: usize = self.weight_shape().iter().product();
        (w + if self.bias { self.out_ch } else { 0 }) as u64
    }
}

/// Uniform in `±1/√fan_in`.
fn init_uniform<T: Float>(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::rand_uniform(shape, -bound, bound, rng)
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub name: String,
    pub spec: ConvSpec,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Conv2d {
    pub fn new<T: Float>(store: &mut ParamStore<T>, name: &str, spec: ConvSpec, rng: &mut impl Rng) -> Result<Self> {
        spec.validate()?;
        let shape = spec.weight_shape();
        let fan_in = shape[1] * shape[2] * shape[3];
        let weight = store.add(join(name, "weight"), init_uniform(&shape, fan_in, rng), ParamKind::Weight)?;
        let bias = if spec.bias {
            Some(store.add(join(name, "bias"), Tensor::zeros(&[spec.out_ch]), ParamKind::Exempt)?)
        } else {
            None
        };
        Ok(Self {
            name: name.to_string(),
            spec,
            weight,
            bias,
        })
    }

    pub fn forward<T: Float>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        check_channels(&self.name, self.spec.in_ch, f.graph.shape(x).get(1).copied().unwrap_or(0))?;
        let w = f.param(self.weight)?;
        let b = self.bias.map(|b| f.param(b)).transpose()?;
        f.graph.conv2d(x, w, b, self.spec.stride, self.spec.padding, self.spec.groups)
    }

    pub fn out_chw(&self, input: Chw) -> Result<Chw> {
        check_channels(&self.name, self.spec.in_ch, input[0])?;
        let s = &self.spec;
        match (
            out_extent(input[1], s.kernel, s.stride, s.padding),
            out_extent(input[2], s.kernel, s.stride, s.padding),
        ) {
            (Some(h), Some(w)) => Ok([s.out_ch, h, w]),
            _ => Err(Error::config(format!(
                "{}: kernel {} does not fit input {}x{}",
                self.name, s.kernel, input[1], input[2]
            ))),
        }
    }

    pub fn param_count(&self) -> u64 {
        self.spec.param_count()
    }

    /// One row: `out_H·out_W·out_C·(in_C/groups)·k²` MACs.
    pub fn costs(&self, input: Chw, out: &mut Vec<LayerCost>) -> Result<Chw> {
        let o = self.out_chw(input)?;
        let s = &self.spec;
        let macs = (o[1] * o[2] * o[0] * (s.in_ch / s.groups) * s.kernel * s.kernel) as u64;
        let kind = if s.groups == s.in_ch && s.groups > 1 {
            "depthwise_conv"
        } else {
            "conv"
        };
        out.push(LayerCost::new(&self.name, kind, o, self.param_count(), macs));
        Ok(o)
    }
}

/// Fully connected layer on `[batch, in]` inputs.
#[derive(Clone, Debug)]
pub struct Linear {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = store.add(
            join(name, "weight"),
            init_uniform(&[out_features, in_features], in_features, rng),
            ParamKind::Weight,
        )?;
        let bias = if bias {
            Some(store.add(join(name, "bias"), Tensor::zeros(&[out_features]), ParamKind::Exempt)?)
        } else {
            None
        };
        Ok(Self {
            name: name.to_string(),
            in_features,
            out_features,
            weight,
            bias,
        })
    }

    pub fn forward<T: Float>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let w = f.param(self.weight)?;
        let b = self.bias.map(|b| f.param(b)).transpose()?;
        f.graph.linear(x, w, b)
    }

    pub fn param_count(&self) -> u64 {
        (self.in_features * self.out_features + if self.bias.is_some() { self.out_features } else { 0 }) as u64
    }

    pub fn cost(&self) -> LayerCost {
        LayerCost::new(
            &self.name,
            "linear",
            [self.out_features, 1, 1],
            self.param_count(),
            (self.in_features * self.out_features) as u64,
        )
    }
}

/// Depthwise `k×k` convolution (stride as configured, no bias) followed by a
/// pointwise `1×1` convolution.
#[derive(Clone, Debug)]
pub struct SeparableConv {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub depthwise: Conv2d,
    pub pointwise: Conv2d,
}

impl SeparableConv {
    /// `pointwise_bias` should be set only when no normalization follows.
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Float>(
        store: &mut ParamStore<T>,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pointwise_bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if kernel % 2 == 0 {
            return Err(Error::config(format!("{name}: separable kernel must be odd, got {kernel}")));
        }
        let depthwise = Conv2d::new(
            store,
            &join(name, "depthwise"),
            ConvSpec::same(in_ch, in_ch, kernel, stride).with_groups(in_ch),
            rng,
        )?;
        let pointwise = Conv2d::new(
            store,
            &join(name, "pointwise"),
            ConvSpec::same(in_ch, out_ch, 1, 1).with_bias(pointwise_bias),
            rng,
        )?;
        Ok(Self {
            name: name.to_string(),
            in_ch,
            out_ch,
            kernel,
            stride,
            depthwise,
            pointwise,
        })
    }

    pub fn forward<T: Float>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let y = self.depthwise.forward(f, x)?;
        self.pointwise.forward(f, y)
    }

    /// `in·k² + in·out (+ out with pointwise bias)`.
    pub fn param_count(&self) -> u64 {
        self.depthwise.param_count() + self.pointwise.param_count()
    }

    pub fn costs(&self, input: Chw, out: &mut Vec<LayerCost>) -> Result<Chw> {
        let mid = self.depthwise.costs(input, out)?;
        self.pointwise.costs(mid, out)
    }
}
