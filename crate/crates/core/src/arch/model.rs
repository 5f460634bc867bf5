use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blocks::{DownsampleBlock, Head, NexBlock, SepNormAct, Transition, XceptionBlock};
use super::config::ArchConfig;
use super::cost::CostReport;
use crate::error::{Error, Result};
use crate::layers::{Chw, Forward, LayerCost, Stem};
use crate::params::ParamStore;
use crate::tensor::{Float, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    NexceptionT,
    NexceptionS,
    NexceptionTp,
    Xception,
    ReducedNas,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::NexceptionT,
        Variant::NexceptionS,
        Variant::NexceptionTp,
        Variant::Xception,
        Variant::ReducedNas,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::NexceptionT => "nexception_t",
            Variant::NexceptionS => "nexception_s",
            Variant::NexceptionTp => "nexception_tp",
            Variant::Xception => "xception",
            Variant::ReducedNas => "reduced_nas",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == name)
            .ok_or_else(|| Error::UnknownArchitecture(name.to_string()))
    }

    pub fn default_input(self) -> usize {
        match self {
            Variant::Xception => 299,
            Variant::ReducedNas => 32,
            _ => 224,
        }
    }

    pub fn default_classes(self) -> usize {
        match self {
            Variant::ReducedNas => 100,
            _ => 1000,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Everything needed to rebuild a model's structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub variant: Variant,
    pub num_classes: usize,
    /// Square input side used for the recorded stage shapes.
    pub input_size: usize,
    /// Search configuration; only read by `reduced_nas`.
    #[serde(default)]
    pub config: ArchConfig,
    /// Base width of `reduced_nas`.
    #[serde(default = "default_width")]
    pub width: usize,
}

fn default_width() -> usize {
    16
}

impl ArchSpec {
    pub fn named(variant: Variant) -> Self {
        Self {
            variant,
            num_classes: variant.default_classes(),
            input_size: variant.default_input(),
            config: ArchConfig::default(),
            width: default_width(),
        }
    }

    pub fn reduced(config: ArchConfig, num_classes: usize) -> Self {
        Self {
            config,
            num_classes,
            ..Self::named(Variant::ReducedNas)
        }
    }

    pub fn with_classes(mut self, n: usize) -> Self {
        self.num_classes = n;
        self
    }

    pub fn with_input(mut self, side: usize) -> Self {
        self.input_size = side;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::config("num_classes must be positive"));
        }
        if self.input_size == 0 {
            return Err(Error::config("input size must be positive"));
        }
        if self.variant == Variant::ReducedNas {
            if self.width < 2 || self.width % 2 != 0 {
                return Err(Error::config(format!("reduced_nas width {} must be even and ≥ 2", self.width)));
            }
            self.config.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum Layer {
    Stem(Stem),
    Downsample(DownsampleBlock),
    Nex(NexBlock),
    Xception(XceptionBlock),
    SepNormAct(SepNormAct),
    Transition(Transition),
    Head(Head),
}

impl Layer {
    fn forward<T: Float>(&self, f: &mut Forward<'_, T>, x: Var, drop_path: f64) -> Result<Var> {
        match self {
            Layer::Stem(l) => l.forward(f, x),
            Layer::Downsample(l) => l.forward(f, x),
            Layer::Nex(l) => l.forward(f, x, drop_path),
            Layer::Xception(l) => l.forward(f, x),
            Layer::SepNormAct(l) => l.forward(f, x),
            Layer::Transition(l) => l.forward(f, x),
            Layer::Head(l) => l.forward(f, x),
        }
    }

    fn costs(&self, input: Chw, out: &mut Vec<LayerCost>) -> Result<Chw> {
        match self {
            Layer::Stem(l) => l.costs(input, out),
            Layer::Downsample(l) => l.costs(input, out),
            Layer::Nex(l) => l.costs(input, out),
            Layer::Xception(l) => l.costs(input, out),
            Layer::SepNormAct(l) => l.costs(input, out),
            Layer::Transition(l) => l.costs(input, out),
            Layer::Head(l) => l.costs(input, out),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Stage {
    pub name: String,
    pub layers: Vec<Layer>,
    /// Per-sample output shape at the spec's input size.
    pub expected: Chw,
}

/// Output shape of one stage observed during a forward pass.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StageShape {
    pub stage: String,
    pub shape: Vec<usize>,
}

/// Model structure, separate from its parameters so that a forward context
/// can borrow the parameters mutably while the structure is read.
#[derive(Clone, Debug)]
pub struct Network {
    pub spec: ArchSpec,
    pub stages: Vec<Stage>,
    /// Stochastic-depth probability for every residual middle block.
    pub drop_path: f64,
}

impl Network {
    pub fn forward<T: Float>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        Ok(self.forward_traced(f, x)?.0)
    }

    pub fn forward_traced<T: Float>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<(Var, Vec<StageShape>)> {
        let mut y = x;
        let mut trace = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            for layer in &stage.layers {
                y = layer.forward(f, y, self.drop_path)?;
            }
            trace.push(StageShape {
                stage: stage.name.clone(),
                shape: f.graph.shape(y).to_vec(),
            });
        }
        Ok((y, trace))
    }

    /// Symbolic walk at input side `side`, returning every layer's cost row.
    pub fn layer_costs(&self, side: usize) -> Result<Vec<LayerCost>> {
        let mut rows = Vec::new();
        let mut s = [3, side, side];
        for stage in &self.stages {
            for layer in &stage.layers {
                s = layer.costs(s, &mut rows)?;
            }
        }
        Ok(rows)
    }

    /// Per-stage output shapes at input side `side`, without running anything.
    pub fn stage_shapes(&self, side: usize) -> Result<Vec<(String, Chw)>> {
        let mut s = [3, side, side];
        let mut rows = Vec::new();
        let mut out = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            for layer in &stage.layers {
                s = layer.costs(s, &mut rows)?;
            }
            out.push((stage.name.clone(), s));
        }
        Ok(out)
    }
}

/// An executable model: structure plus named parameters.
#[derive(Clone, Debug)]
pub struct ModelGraph<T: Float> {
    pub net: Network,
    pub params: ParamStore<T>,
}

impl<T: Float> ModelGraph<T> {
    pub fn spec(&self) -> &ArchSpec {
        &self.net.spec
    }

    pub fn name(&self) -> &'static str {
        self.net.spec.variant.name()
    }

    /// Eval-mode forward on a batch; nothing is recorded for backward.
    pub fn infer(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut f = Forward::inference(&mut self.params, &mut rng);
        let xv = f.graph.input(x.clone())?;
        let y = self.net.forward(&mut f, xv)?;
        Ok(f.graph.value(y).clone())
    }

    /// Eval-mode forward that records each stage's output shape.
    pub fn trace(&mut self, x: &Tensor<T>) -> Result<Vec<StageShape>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut f = Forward::inference(&mut self.params, &mut rng);
        let xv = f.graph.input(x.clone())?;
        Ok(self.net.forward_traced(&mut f, xv)?.1)
    }

    /// Checks a trace against the shapes recorded at build time.
    pub fn check_trace(&self, trace: &[StageShape]) -> Result<()> {
        if trace.len() != self.net.stages.len() {
            return Err(Error::config(format!(
                "trace has {} stages, model has {}",
                trace.len(),
                self.net.stages.len()
            )));
        }
        for (t, s) in trace.iter().zip(&self.net.stages) {
            let want: Vec<usize> = match s.expected {
                [c, 1, 1] if s.name == "head" => vec![c],
                e => e.to_vec(),
            };
            if t.shape[1..] != want[..] {
                return Err(Error::config(format!(
                    "stage {}: expected {:?}, got {:?}",
                    s.name, want, &t.shape[1..]
                )));
            }
        }
        Ok(())
    }

    pub fn cost_report(&self, side: usize) -> Result<CostReport> {
        CostReport::new(self, side)
    }
}
