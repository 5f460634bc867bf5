//! Reverse-mode autodiff on an explicit, append-only tape.
//!
//! Every operation appends a node holding its output value plus whatever it
//! needs for the backward rule. Nodes only reference earlier nodes, so the
//! tape order is a topological order and `backward` is a single reverse sweep.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::kernels::{self, ConvGeom, PoolGeom};
use super::{Float, Tensor};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};

pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Gelu,
    Elu,
    Celu,
}

impl Activation {
    pub const ALL: [Activation; 4] = [Activation::Relu, Activation::Gelu, Activation::Elu, Activation::Celu];

    pub fn apply<T: Float>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            // Exact GELU: x·Φ(x).
            Activation::Gelu => x * normal_cdf(x),
            // ELU and CELU coincide for alpha = 1.
            Activation::Elu | Activation::Celu => {
                if x > T::zero() {
                    x
                } else {
                    x.exp_m1()
                }
            }
        }
    }

    pub fn derivative<T: Float>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Gelu => {
                let pdf = (-(x * x) * T::of(0.5)).exp() * T::of(1.0 / (2.0 * std::f64::consts::PI).sqrt());
                normal_cdf(x) + x * pdf
            }
            Activation::Elu | Activation::Celu => {
                if x > T::zero() {
                    T::one()
                } else {
                    x.exp()
                }
            }
        }
    }
}

fn normal_cdf<T: Float>(x: T) -> T {
    T::of(0.5) * (T::one() + (x * T::of(std::f64::consts::FRAC_1_SQRT_2)).erf())
}

/// Source index in `[0, len)` of padded position `i` under mirror padding.
fn reflect_index(i: usize, pad: usize, len: usize) -> usize {
    let k = i as isize - pad as isize;
    if k < 0 {
        (-k) as usize
    } else if k as usize >= len {
        2 * (len - 1) - k as usize
    } else {
        k as usize
    }
}

pub(crate) fn sigmoid<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Statistics source for batch normalization.
pub enum BatchNormMode<'a, T> {
    /// Normalize with the current batch's statistics.
    Batch,
    /// Normalize with stored running statistics.
    Running { mean: &'a [T], var: &'a [T] },
}

/// Per-channel batch statistics; `var` is the unbiased estimate used for
/// running averages.
#[derive(Clone, Debug)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    pub var: Vec<T>,
}

enum Op<T> {
    Leaf,
    Param,
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        geom: ConvGeom,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Act {
        x: Var,
        kind: Activation,
    },
    Sigmoid {
        x: Var,
    },
    BatchNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        batch_stats: bool,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    GlobalAvgPool {
        x: Var,
    },
    MaxPool {
        x: Var,
        geom: PoolGeom,
        argmax: Vec<u32>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    ScaleChannels {
        x: Var,
        s: Var,
    },
    ScaleSamples {
        x: Var,
        factors: Vec<T>,
    },
    Reshape {
        x: Var,
    },
    ReflectPad {
        x: Var,
        pad: usize,
    },
    Sum {
        x: Var,
    },
    Mean {
        x: Var,
    },
    BceSoft {
        logits: Var,
        targets: Vec<T>,
    },
    SoftCrossEntropy {
        logits: Var,
        targets: Vec<T>,
        probs: Vec<T>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param => "param",
            Op::Conv2d { .. } => "conv2d",
            Op::Linear { .. } => "linear",
            Op::Act { .. } => "activation",
            Op::Sigmoid { .. } => "sigmoid",
            Op::BatchNorm { .. } => "batch_norm",
            Op::LayerNorm { .. } => "layer_norm",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
            Op::MaxPool { .. } => "max_pool",
            Op::Add { .. } => "add",
            Op::Mul { .. } => "mul",
            Op::ScaleChannels { .. } => "scale_channels",
            Op::ScaleSamples { .. } => "scale_samples",
            Op::Reshape { .. } => "reshape",
            Op::ReflectPad { .. } => "reflect_pad",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::BceSoft { .. } => "bce_soft_loss",
            Op::SoftCrossEntropy { .. } => "soft_cross_entropy",
        }
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param => vec![],
            Op::Conv2d { x, w, b, .. } | Op::Linear { x, w, b } => {
                let mut v = vec![*x, *w];
                v.extend(b);
                v
            }
            Op::BatchNorm { x, gamma, beta, .. } | Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Add { a, b } | Op::Mul { a, b } => vec![*a, *b],
            Op::ScaleChannels { x, s } => vec![*x, *s],
            Op::Act { x, .. }
            | Op::Sigmoid { x }
            | Op::GlobalAvgPool { x }
            | Op::MaxPool { x, .. }
            | Op::ScaleSamples { x, .. }
            | Op::Reshape { x }
            | Op::ReflectPad { x, .. }
            | Op::Sum { x }
            | Op::Mean { x } => vec![*x],
            Op::BceSoft { logits, .. } | Op::SoftCrossEntropy { logits, .. } => vec![*logits],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// The tape. One graph per forward pass; single-threaded by contract.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    param_leaves: HashMap<ParamId, Var>,
    grad_enabled: bool,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::config(format!("{op}: shape {a:?} does not match {b:?}")));
    }
    Ok(())
}

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            param_leaves: HashMap::new(),
            grad_enabled: true,
        }
    }

    /// A tape that records values only; nothing is kept for backward.
    pub fn no_grad() -> Self {
        Self {
            grad_enabled: false,
            ..Self::new()
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        self.nodes.push(Node {
            value,
            op,
            requires_grad: requires_grad && self.grad_enabled,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// A constant input.
    pub fn input(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, Op::Leaf, false)
    }

    /// An input whose gradient is wanted (finite-difference checks).
    pub fn input_with_grad(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, Op::Leaf, true)
    }

    /// The tape leaf for a stored parameter; repeated calls return the same leaf.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.param_leaves.get(&id) {
            return Ok(v);
        }
        let p = store.get(id);
        let v = self.push(p.value.clone(), Op::Param, p.trainable)?;
        self.param_leaves.insert(id, v);
        Ok(v)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize, groups: usize) -> Result<Var> {
        let xs = self.value(x).dims4()?;
        let geom = ConvGeom::new(xs, self.shape(w), stride, padding, groups)?;
        if let Some(b) = b {
            same_shape("conv2d bias", self.shape(b), &[geom.out_ch])?;
        }
        let out = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(Tensor::from_parts(geom.out_shape().to_vec(), out), Op::Conv2d { x, w, b, geom }, rg)
    }

    /// `y = x·wᵀ + b` with `x: [batch, in]`, `w: [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (&[batch, fin], &[fout, win]) = (self.shape(x), self.shape(w)) else {
            return Err(Error::config(format!(
                "linear expects x [batch, in] and w [out, in], got {:?} and {:?}",
                self.shape(x),
                self.shape(w)
            )));
        };
        if fin != win {
            return Err(Error::config(format!(
                "linear inner dimension mismatch: input has {fin} features, weight expects {win}"
            )));
        }
        if let Some(b) = b {
            same_shape("linear bias", self.shape(b), &[fout])?;
        }
        let mut out = vec![T::zero(); batch * fout];
        kernels::gemm(batch, fin, fout, self.value(x).data(), false, self.value(w).data(), true, &mut out, false);
        if let Some(b) = b {
            let bd = self.value(b).data();
            for row in out.chunks_mut(fout) {
                row.iter_mut().zip(bd).for_each(|(o, &bv)| *o += bv);
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(Tensor::from_parts(vec![batch, fout], out), Op::Linear { x, w, b }, rg)
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let out = self.value(x).map(|v| kind.apply(v));
        let rg = self.rg(x);
        self.push(out, Op::Act { x, kind }, rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let out = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid { x }, rg)
    }

    /// Per-channel normalization of a rank-4 input with ε = 1e-5. In
    /// `Batch` mode the batch statistics are returned for the caller's
    /// running averages.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let [n, c, h, w] = self.value(x).dims4()?;
        same_shape("batch_norm scale", self.shape(gamma), &[c])?;
        same_shape("batch_norm shift", self.shape(beta), &[c])?;
        let hw = h * w;
        let m = n * hw;
        let xd = self.value(x).data();
        let eps = T::of(BATCH_NORM_EPS);
        let (mean, var_biased, stats) = match mode {
            BatchNormMode::Batch => {
                if m <= 1 {
                    return Err(Error::DegenerateStatistics(format!(
                        "batch_norm in training mode needs more than one value per channel, got batch {n} with spatial {h}x{w}"
                    )));
                }
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                for ch in 0..c {
                    let mut s = 0.0f64;
                    for i in 0..n {
                        s += xd[(i * c + ch) * hw..][..hw].iter().map(|v| v.as_f64()).sum::<f64>();
                    }
                    let mu = s / m as f64;
                    let mut ss = 0.0f64;
                    for i in 0..n {
                        ss += xd[(i * c + ch) * hw..][..hw]
                            .iter()
                            .map(|v| {
                                let d = v.as_f64() - mu;
                                d * d
                            })
                            .sum::<f64>();
                    }
                    mean[ch] = T::of(mu);
                    var[ch] = T::of(ss / m as f64);
                }
                let unbiased = var.iter().map(|&v| v * T::of(m as f64 / (m as f64 - 1.0))).collect();
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            }
            BatchNormMode::Running { mean, var } => {
                if mean.len() != c || var.len() != c {
                    return Err(Error::config(format!(
                        "batch_norm running statistics have {} entries, input has {c} channels",
                        mean.len()
                    )));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<T> = var_biased.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        for i in 0..n {
            for ch in 0..c {
                let base = (i * c + ch) * hw;
                for k in base..base + hw {
                    let xh = (xd[k] - mean[ch]) * inv_std[ch];
                    xhat[k] = xh;
                    out[k] = g[ch] * xh + b[ch];
                }
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let keep = rg && self.grad_enabled;
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat: if keep { xhat } else { Vec::new() },
            inv_std,
            batch_stats: stats.is_some(),
        };
        let v = self.push(Tensor::from_parts(vec![n, c, h, w], out), op, rg)?;
        Ok((v, stats))
    }

    /// Normalization over the channel dimension at each spatial position, ε = 1e-6.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        same_shape("layer_norm scale", self.shape(gamma), &[c])?;
        same_shape("layer_norm shift", self.shape(beta), &[c])?;
        let hw = h * w;
        let xd = self.value(x).data();
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        let eps = LAYER_NORM_EPS;
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        let mut inv_std = vec![T::zero(); n * hw];
        for i in 0..n {
            let base = i * c * hw;
            for p in 0..hw {
                let mut s = 0.0f64;
                for ch in 0..c {
                    s += xd[base + ch * hw + p].as_f64();
                }
                let mu = s / c as f64;
                let mut ss = 0.0f64;
                for ch in 0..c {
                    let d = xd[base + ch * hw + p].as_f64() - mu;
                    ss += d * d;
                }
                let is = 1.0 / (ss / c as f64 + eps).sqrt();
                inv_std[i * hw + p] = T::of(is);
                for ch in 0..c {
                    let k = base + ch * hw + p;
                    let xh = T::of((xd[k].as_f64() - mu) * is);
                    xhat[k] = xh;
                    out[k] = g[ch] * xh + b[ch];
                }
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let keep = rg && self.grad_enabled;
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat: if keep { xhat } else { Vec::new() },
            inv_std: if keep { inv_std } else { Vec::new() },
        };
        self.push(Tensor::from_parts(vec![n, c, h, w], out), op, rg)
    }

    /// `[n, c, h, w] → [n, c]` spatial means.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        let hw = h * w;
        let scale = T::of(1.0 / hw as f64);
        let out: Vec<T> = self
            .value(x)
            .data()
            .chunks(hw)
            .map(|plane| plane.iter().copied().sum::<T>() * scale)
            .collect();
        let rg = self.rg(x);
        self.push(Tensor::from_parts(vec![n, c], out), Op::GlobalAvgPool { x }, rg)
    }

    /// Max pooling; the gradient goes to the first maximum in scan order.
    pub fn max_pool(&mut self, x: Var, kernel: usize, stride: usize, padding: usize) -> Result<Var> {
        let geom = PoolGeom::new(self.value(x).dims4()?, kernel, stride, padding)?;
        let (out, argmax) = kernels::max_pool_forward(&geom, self.value(x).data());
        let rg = self.rg(x);
        let argmax = if rg && self.grad_enabled { argmax } else { Vec::new() };
        let shape = vec![geom.batch, geom.channels, geom.out_h, geom.out_w];
        self.push(Tensor::from_parts(shape, out), Op::MaxPool { x, geom, argmax }, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.shape(a), self.shape(b))?;
        let out: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Add { a, b }, rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.shape(a), self.shape(b))?;
        let out: Vec<T> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        let shape = self.shape(a).to_vec();
        self.push(Tensor::from_parts(shape, out), Op::Mul { a, b }, rg)
    }

    /// `x[n, c, :, :] · s[n, c]`.
    pub fn scale_channels(&mut self, x: Var, s: Var) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        same_shape("scale_channels", self.shape(s), &[n, c])?;
        let hw = h * w;
        let sd = self.value(s).data();
        let mut out = self.value(x).to_vec();
        for (plane, &sv) in out.chunks_mut(hw).zip(sd) {
            plane.iter_mut().for_each(|v| *v *= sv);
        }
        let rg = self.rg(x) || self.rg(s);
        self.push(Tensor::from_parts(vec![n, c, h, w], out), Op::ScaleChannels { x, s }, rg)
    }

    /// Multiplies sample `i` of `x` by the constant `factors[i]`.
    pub fn scale_samples(&mut self, x: Var, factors: &[T]) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if shape.first() != Some(&factors.len()) {
            return Err(Error::config(format!(
                "scale_samples: {} factors for batch shape {shape:?}",
                factors.len()
            )));
        }
        let per = self.value(x).numel() / factors.len().max(1);
        let mut out = self.value(x).to_vec();
        for (chunk, &f) in out.chunks_mut(per.max(1)).zip(factors) {
            chunk.iter_mut().for_each(|v| *v *= f);
        }
        let rg = self.rg(x);
        self.push(
            Tensor::from_parts(shape, out),
            Op::ScaleSamples {
                x,
                factors: factors.to_vec(),
            },
            rg,
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshape(shape)?;
        let rg = self.rg(x);
        self.push(out, Op::Reshape { x }, rg)
    }

    /// Mirror padding of the two spatial axes, excluding the edge pixel
    /// (`[a b c] → b [a b c] b`). Requires `pad` smaller than each extent.
    pub fn reflect_pad(&mut self, x: Var, pad: usize) -> Result<Var> {
        let [n, c, h, w] = self.value(x).dims4()?;
        if pad >= h || pad >= w {
            return Err(Error::config(format!("reflect_pad: pad {pad} needs input larger than {h}x{w}")));
        }
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let xd = self.value(x).data();
        let mut out = Vec::with_capacity(n * c * ph * pw);
        for plane in xd.chunks(h * w) {
            for i in 0..ph {
                let si = reflect_index(i, pad, h);
                for j in 0..pw {
                    out.push(plane[si * w + reflect_index(j, pad, w)]);
                }
            }
        }
        let rg = self.rg(x);
        self.push(Tensor::from_parts(vec![n, c, ph, pw], out), Op::ReflectPad { x, pad }, rg)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.value(x).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum { x }, rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let s = t.sum() / T::of(t.numel() as f64);
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean { x }, rg)
    }

    /// Binary cross-entropy on logits against soft targets in `[0, 1]`,
    /// averaged over batch and classes, in the overflow-free form
    /// `max(z,0) − z·t + log(1 + e^{−|z|})`.
    pub fn bce_soft_loss(&mut self, logits: Var, targets: &Tensor<T>) -> Result<Var> {
        same_shape("bce_soft_loss", self.shape(logits), targets.shape())?;
        if let Some(bad) = targets.data().iter().find(|t| !(T::zero()..=T::one()).contains(*t)) {
            return Err(Error::config(format!("bce target {bad} outside [0, 1]")));
        }
        let z = self.value(logits).data();
        let total: f64 = z
            .iter()
            .zip(targets.data())
            .map(|(&z, &t)| {
                let (z, t) = (z.as_f64(), t.as_f64());
                z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()
            })
            .sum();
        let loss = T::of(total / z.len().max(1) as f64);
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(loss),
            Op::BceSoft {
                logits,
                targets: targets.to_vec(),
            },
            rg,
        )
    }

    /// Cross-entropy against soft targets: `mean_batch Σ_k −t_k log softmax(z)_k`.
    pub fn soft_cross_entropy(&mut self, logits: Var, targets: &Tensor<T>) -> Result<Var> {
        same_shape("soft_cross_entropy", self.shape(logits), targets.shape())?;
        let &[batch, k] = self.shape(logits) else {
            return Err(Error::config("soft_cross_entropy expects [batch, classes] logits"));
        };
        let z = self.value(logits).data();
        let t = targets.data();
        let mut probs = vec![T::zero(); z.len()];
        let mut total = 0.0f64;
        for i in 0..batch {
            let row = &z[i * k..(i + 1) * k];
            let mx = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.as_f64()));
            let se: f64 = row.iter().map(|v| (v.as_f64() - mx).exp()).sum();
            let lse = mx + se.ln();
            for j in 0..k {
                probs[i * k + j] = T::of((row[j].as_f64() - lse).exp());
                total += t[i * k + j].as_f64() * (lse - row[j].as_f64());
            }
        }
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(T::of(total / batch.max(1) as f64)),
            Op::SoftCrossEntropy {
                logits,
                targets: t.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Gradient of the last `backward` loss with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor<T>> {
        self.grads
            .get(v.0)
            .and_then(|g| g.as_ref())
            .map(|g| Tensor::from_parts(self.shape(v).to_vec(), g.clone()))
    }

    /// Propagates `∂loss/∂·` through the tape and adds the parameter gradients
    /// into `params`. Gradients accumulate across calls until cleared.
    pub fn backward(&mut self, loss: Var, params: &mut ParamStore<T>) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(gy);
                continue;
            }
            for p in node.op.parents() {
                if p.0 >= idx {
                    return Err(Error::GraphCycle(idx));
                }
            }
            self.backward_node(idx, &gy, &mut grads);
            grads[idx] = Some(gy);
        }

        for (&id, &v) in &self.param_leaves {
            if let Some(g) = &grads[v.0] {
                let p = params.get(id);
                if !p.trainable {
                    continue;
                }
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(Error::NonFiniteGradient(p.name.clone()));
                }
                params.accumulate_grad(id, g);
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backward_node(&self, idx: usize, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let acc = |grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(g),
            }
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::Conv2d { x, w, b, geom } => {
                let cg = kernels::conv2d_backward(
                    geom,
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gy,
                    self.rg(*x),
                    self.rg(*w),
                    b.is_some_and(|b| self.rg(b)),
                );
                if let Some(dx) = cg.dx {
                    acc(grads, *x, dx);
                }
                if let Some(dw) = cg.dw {
                    acc(grads, *w, dw);
                }
                if let (Some(b), Some(db)) = (b, cg.db) {
                    acc(grads, *b, db);
                }
            }
            Op::Linear { x, w, b } => {
                let &[batch, fin] = self.shape(*x) else { unreachable!() };
                let fout = self.shape(*w)[0];
                if self.rg(*x) {
                    let mut dx = vec![T::zero(); batch * fin];
                    kernels::gemm(batch, fout, fin, gy, false, self.value(*w).data(), false, &mut dx, false);
                    acc(grads, *x, dx);
                }
                if self.rg(*w) {
                    let mut dw = vec![T::zero(); fout * fin];
                    kernels::gemm(fout, batch, fin, gy, true, self.value(*x).data(), false, &mut dw, false);
                    acc(grads, *w, dw);
                }
                if let Some(b) = b {
                    let mut db = vec![T::zero(); fout];
                    for row in gy.chunks(fout) {
                        db.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                    }
                    acc(grads, *b, db);
                }
            }
            Op::Act { x, kind } => {
                let dx = self
                    .value(*x)
                    .data()
                    .iter()
                    .zip(gy)
                    .map(|(&xv, &g)| g * kind.derivative(xv))
                    .collect();
                acc(grads, *x, dx);
            }
            Op::Sigmoid { x } => {
                let dx = node
                    .value
                    .data()
                    .iter()
                    .zip(gy)
                    .map(|(&s, &g)| g * s * (T::one() - s))
                    .collect();
                acc(grads, *x, dx);
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                batch_stats,
            } => {
                let [n, c, h, w] = self.value(*x).dims4().expect("rank-4");
                let hw = h * w;
                let m = T::of((n * hw) as f64);
                let g = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                for i in 0..n {
                    for ch in 0..c {
                        let base = (i * c + ch) * hw;
                        for k in base..base + hw {
                            dgamma[ch] += gy[k] * xhat[k];
                            dbeta[ch] += gy[k];
                        }
                    }
                }
                if self.rg(*x) {
                    let mut dx = vec![T::zero(); gy.len()];
                    for i in 0..n {
                        for ch in 0..c {
                            let base = (i * c + ch) * hw;
                            for k in base..base + hw {
                                dx[k] = if *batch_stats {
                                    // Σ dxhat = γ·dβ, Σ dxhat·xhat = γ·dγ.
                                    g[ch] * inv_std[ch] / m * (m * gy[k] - dbeta[ch] - xhat[k] * dgamma[ch])
                                } else {
                                    g[ch] * inv_std[ch] * gy[k]
                                };
                            }
                        }
                    }
                    acc(grads, *x, dx);
                }
                acc(grads, *gamma, dgamma);
                acc(grads, *beta, dbeta);
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let [n, c, h, w] = self.value(*x).dims4().expect("rank-4");
                let hw = h * w;
                let g = self.value(*gamma).data();
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut dx = vec![T::zero(); gy.len()];
                let cf = T::of(c as f64);
                for i in 0..n {
                    let base = i * c * hw;
                    for p in 0..hw {
                        let mut s1 = T::zero();
                        let mut s2 = T::zero();
                        for ch in 0..c {
                            let k = base + ch * hw + p;
                            let dxh = gy[k] * g[ch];
                            s1 += dxh;
                            s2 += dxh * xhat[k];
                            dgamma[ch] += gy[k] * xhat[k];
                            dbeta[ch] += gy[k];
                        }
                        let is = inv_std[i * hw + p];
                        for ch in 0..c {
                            let k = base + ch * hw + p;
                            dx[k] = is / cf * (cf * gy[k] * g[ch] - s1 - xhat[k] * s2);
                        }
                    }
                }
                acc(grads, *x, dx);
                acc(grads, *gamma, dgamma);
                acc(grads, *beta, dbeta);
            }
            Op::GlobalAvgPool { x } => {
                let [_, _, h, w] = self.value(*x).dims4().expect("rank-4");
                let hw = h * w;
                let scale = T::of(1.0 / hw as f64);
                let mut dx = Vec::with_capacity(gy.len() * hw);
                for &g in gy {
                    dx.extend(std::iter::repeat_n(g * scale, hw));
                }
                acc(grads, *x, dx);
            }
            Op::MaxPool { x, geom, argmax } => {
                acc(grads, *x, kernels::max_pool_backward(geom, argmax, gy));
            }
            Op::Add { a, b } => {
                acc(grads, *a, gy.to_vec());
                acc(grads, *b, gy.to_vec());
            }
            Op::Mul { a, b } => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                acc(grads, *a, gy.iter().zip(bv).map(|(&g, &v)| g * v).collect());
                acc(grads, *b, gy.iter().zip(av).map(|(&g, &v)| g * v).collect());
            }
            Op::ScaleChannels { x, s } => {
                let [_, _, h, w] = self.value(*x).dims4().expect("rank-4");
                let hw = h * w;
                let sd = self.value(*s).data();
                let xd = self.value(*x).data();
                if self.rg(*x) {
                    let mut dx = gy.to_vec();
                    for (plane, &sv) in dx.chunks_mut(hw).zip(sd) {
                        plane.iter_mut().for_each(|v| *v *= sv);
                    }
                    acc(grads, *x, dx);
                }
                let ds = gy
                    .chunks(hw)
                    .zip(xd.chunks(hw))
                    .map(|(g, xv)| g.iter().zip(xv).map(|(&a, &b)| a * b).sum::<T>())
                    .collect();
                acc(grads, *s, ds);
            }
            Op::ScaleSamples { x, factors } => {
                let per = gy.len() / factors.len().max(1);
                let mut dx = gy.to_vec();
                for (chunk, &f) in dx.chunks_mut(per.max(1)).zip(factors) {
                    chunk.iter_mut().for_each(|v| *v *= f);
                }
                acc(grads, *x, dx);
            }
            Op::Reshape { x } => acc(grads, *x, gy.to_vec()),
            Op::ReflectPad { x, pad } => {
                let [_, _, h, w] = self.value(*x).dims4().expect("rank-4");
                let (ph, pw) = (h + 2 * pad, w + 2 * pad);
                let mut dx = vec![T::zero(); self.value(*x).numel()];
                for (dplane, gplane) in dx.chunks_mut(h * w).zip(gy.chunks(ph * pw)) {
                    for i in 0..ph {
                        let si = reflect_index(i, *pad, h);
                        for j in 0..pw {
                            dplane[si * w + reflect_index(j, *pad, w)] += gplane[i * pw + j];
                        }
                    }
                }
                acc(grads, *x, dx);
            }
            Op::Sum { x } => acc(grads, *x, vec![gy[0]; self.value(*x).numel()]),
            Op::Mean { x } => {
                let numel = self.value(*x).numel();
                acc(grads, *x, vec![gy[0] / T::of(numel as f64); numel]);
            }
            Op::BceSoft { logits, targets } => {
                let z = self.value(*logits).data();
                let scale = gy[0] / T::of(z.len().max(1) as f64);
                let dz = z
                    .iter()
                    .zip(targets)
                    .map(|(&z, &t)| (sigmoid(z) - t) * scale)
                    .collect();
                acc(grads, *logits, dz);
            }
            Op::SoftCrossEntropy { logits, targets, probs } => {
                let &[batch, k] = self.shape(*logits) else { unreachable!() };
                let scale = gy[0] / T::of(batch.max(1) as f64);
                let mut dz = vec![T::zero(); batch * k];
                for i in 0..batch {
                    let mass: T = targets[i * k..(i + 1) * k].iter().copied().sum();
                    for j in 0..k {
                        dz[i * k + j] = (probs[i * k + j] * mass - targets[i * k + j]) * scale;
                    }
                }
                acc(grads, *logits, dz);
            }
        }
    }
}
