use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{NormKind, StemKind};
use crate::tensor::Activation;

pub const KERNEL_SIZES: [usize; 4] = [3, 5, 7, 9];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    /// 3×3 max pool, stride 2, padding 1.
    MaxPool,
    /// Learnable depthwise 3×3 convolution at stride 2.
    StridedConv,
    /// Max pool at stride 1 followed by a stride-2 binomial blur.
    BlurPool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bottleneck {
    /// Three `C→C` separable convolutions.
    Off,
    /// `C→3C→C→C`.
    #[serde(alias = "on", alias = "inverted_x3")]
    Inverted,
}

impl Bottleneck {
    pub fn expansion(self) -> usize {
        match self {
            Bottleneck::Off => 1,
            Bottleneck::Inverted => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActPosition {
    AfterExpandOnly,
    AfterAllConvs,
    PreBlock,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormPosition {
    AfterFirstConv,
    AfterAllConvs,
    PreBlock,
    PostBlock,
}

/// One point of the architecture search space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub kernel_entry: usize,
    pub kernel_middle: usize,
    pub kernel_exit: usize,
    pub stem: StemKind,
    pub pool: PoolKind,
    pub bottleneck: Bottleneck,
    pub se: bool,
    pub act_kind: Activation,
    pub act_position: ActPosition,
    pub norm_kind: NormKind,
    pub norm_position: NormPosition,
}

impl Default for ArchConfig {
    /// The configuration shared by the published variants.
    fn default() -> Self {
        Self {
            kernel_entry: 5,
            kernel_middle: 5,
            kernel_exit: 5,
            stem: StemKind::Patchify2x2,
            pool: PoolKind::BlurPool,
            bottleneck: Bottleneck::Inverted,
            se: true,
            act_kind: Activation::Gelu,
            act_position: ActPosition::AfterExpandOnly,
            norm_kind: NormKind::Batch,
            norm_position: NormPosition::AfterFirstConv,
        }
    }
}

/// A named search dimension and its values in canonical order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Dimension {
    pub name: &'static str,
    pub values: Vec<String>,
}

const STEMS: [StemKind; 2] = [StemKind::ConvStem, StemKind::Patchify2x2];
const POOLS: [PoolKind; 3] = [PoolKind::MaxPool, PoolKind::StridedConv, PoolKind::BlurPool];
const BOTTLENECKS: [Bottleneck; 2] = [Bottleneck::Off, Bottleneck::Inverted];
const SE: [bool; 2] = [false, true];
const ACT_POSITIONS: [ActPosition; 4] = [
    ActPosition::AfterExpandOnly,
    ActPosition::AfterAllConvs,
    ActPosition::PreBlock,
    ActPosition::None,
];
const NORMS: [NormKind; 2] = [NormKind::Batch, NormKind::Layer];
const NORM_POSITIONS: [NormPosition; 4] = [
    NormPosition::AfterFirstConv,
    NormPosition::AfterAllConvs,
    NormPosition::PreBlock,
    NormPosition::PostBlock,
];

pub const DIMENSION_NAMES: [&str; 11] = [
    "kernel_entry",
    "kernel_middle",
    "kernel_exit",
    "stem",
    "pool",
    "bottleneck",
    "se",
    "act_kind",
    "act_position",
    "norm_kind",
    "norm_position",
];

fn label<V: Serialize>(v: &V) -> String {
    match serde_json::to_value(v).expect("plain enum serializes") {
        serde_json::Value::String(s) => s,
        other => other.to_string(),
    }
}

fn labels<V: Serialize>(vs: &[V]) -> Vec<String> {
    vs.iter().map(label).collect()
}

fn position<V: PartialEq>(all: &[V], v: &V) -> usize {
    all.iter().position(|x| x == v).expect("value in its domain")
}

fn pick<V: Copy>(dim: &str, all: &[V], i: usize) -> Result<V> {
    all.get(i)
        .copied()
        .ok_or_else(|| Error::config(format!("{dim}: index {i} outside domain of size {}", all.len())))
}

fn parse_label<V: DeserializeOwned>(key: &str, value: &str) -> Result<V> {
    let lower = value.trim().trim_matches('"').to_ascii_lowercase();
    let as_bool = match lower.as_str() {
        "on" | "true" => Some(true),
        "off" | "false" => Some(false),
        _ => None,
    };
    as_bool
        .and_then(|b| serde_json::from_value(serde_json::Value::Bool(b)).ok())
        .or_else(|| serde_json::from_value(serde_json::Value::String(lower)).ok())
        .ok_or_else(|| Error::config(format!("{key}: unrecognized value {value:?}")))
}

impl ArchConfig {
    pub fn dimensions() -> Vec<Dimension> {
        let kernels = labels(&KERNEL_SIZES);
        let domains = [
            kernels.clone(),
            kernels.clone(),
            kernels,
            labels(&STEMS),
            labels(&POOLS),
            labels(&BOTTLENECKS),
            labels(&SE),
            labels(&Activation::ALL),
            labels(&ACT_POSITIONS),
            labels(&NORMS),
            labels(&NORM_POSITIONS),
        ];
        DIMENSION_NAMES
            .iter()
            .zip(domains)
            .map(|(&name, values)| Dimension { name, values })
            .collect()
    }

    /// Number of distinct configurations: the product of domain sizes.
    pub fn cardinality() -> u64 {
        Self::dimensions().iter().map(|d| d.values.len() as u64).product()
    }

    /// Per-dimension value indices in [`DIMENSION_NAMES`] order.
    pub fn indices(&self) -> [usize; 11] {
        [
            position(&KERNEL_SIZES, &self.kernel_entry),
            position(&KERNEL_SIZES, &self.kernel_middle),
            position(&KERNEL_SIZES, &self.kernel_exit),
            position(&STEMS, &self.stem),
            position(&POOLS, &self.pool),
            position(&BOTTLENECKS, &self.bottleneck),
            position(&SE, &self.se),
            position(&Activation::ALL, &self.act_kind),
            position(&ACT_POSITIONS, &self.act_position),
            position(&NORMS, &self.norm_kind),
            position(&NORM_POSITIONS, &self.norm_position),
        ]
    }

    pub fn from_indices(ix: &[usize]) -> Result<Self> {
        if ix.len() != DIMENSION_NAMES.len() {
            return Err(Error::config(format!("expected 11 indices, got {}", ix.len())));
        }
        Ok(Self {
            kernel_entry: pick("kernel_entry", &KERNEL_SIZES, ix[0])?,
            kernel_middle: pick("kernel_middle", &KERNEL_SIZES, ix[1])?,
            kernel_exit: pick("kernel_exit", &KERNEL_SIZES, ix[2])?,
            stem: pick("stem", &STEMS, ix[3])?,
            pool: pick("pool", &POOLS, ix[4])?,
            bottleneck: pick("bottleneck", &BOTTLENECKS, ix[5])?,
            se: pick("se", &SE, ix[6])?,
            act_kind: pick("act_kind", &Activation::ALL, ix[7])?,
            act_position: pick("act_position", &ACT_POSITIONS, ix[8])?,
            norm_kind: pick("norm_kind", &NORMS, ix[9])?,
            norm_position: pick("norm_position", &NORM_POSITIONS, ix[10])?,
        })
    }

    /// A copy with dimension `dim` set to its `value`-th domain element.
    pub fn with_index(&self, dim: usize, value: usize) -> Result<Self> {
        let mut ix = self.indices();
        *ix.get_mut(dim)
            .ok_or_else(|| Error::config(format!("dimension {dim} out of range")))? = value;
        Self::from_indices(&ix)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, k) in [
            ("kernel_entry", self.kernel_entry),
            ("kernel_middle", self.kernel_middle),
            ("kernel_exit", self.kernel_exit),
        ] {
            if !KERNEL_SIZES.contains(&k) {
                return Err(Error::config(format!("{name} = {k}; allowed kernel sizes are {KERNEL_SIZES:?}")));
            }
        }
        Ok(())
    }

    /// Sets one field from its textual form, as used in flat key-value files.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let kernel = |v: &str| -> Result<usize> {
            v.trim()
                .parse()
                .map_err(|_| Error::config(format!("{key}: expected an integer, got {v:?}")))
        };
        let mut next = *self;
        match key {
            "kernel_entry" => next.kernel_entry = kernel(value)?,
            "kernel_middle" => next.kernel_middle = kernel(value)?,
            "kernel_exit" => next.kernel_exit = kernel(value)?,
            "stem" => next.stem = parse_label(key, value)?,
            "pool" => next.pool = parse_label(key, value)?,
            "bottleneck" => next.bottleneck = parse_label(key, value)?,
            "se" => next.se = parse_label(key, value)?,
            "act_kind" => next.act_kind = parse_label(key, value)?,
            "act_position" => next.act_position = parse_label(key, value)?,
            "norm_kind" => next.norm_kind = parse_label(key, value)?,
            "norm_position" => next.norm_position = parse_label(key, value)?,
            _ => return Err(Error::config(format!("unknown architecture key {key:?}"))),
        }
        next.validate()?;
        *self = next;
        Ok(())
    }

    /// `(dimension name, value label)` pairs in canonical order.
    pub fn labels(&self) -> Vec<(&'static str, String)> {
        let dims = Self::dimensions();
        self.indices()
            .iter()
            .zip(dims)
            .map(|(&i, d)| (d.name, d.values[i].clone()))
            .collect()
    }
}
