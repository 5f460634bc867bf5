use std::fmt::Write as _;

use serde::Serialize;

use super::model::ModelGraph;
use crate::error::Result;
use crate::layers::LayerCost;
use crate::tensor::Float;

/// Per-layer and total parameter and multiply-accumulate counts. One MAC is
/// reported as one FLOP. Norms, activations and pooling count zero MACs;
/// the blur filter and the SE gate's linears are counted as convolutions.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CostReport {
    pub model: String,
    pub input: [usize; 3],
    pub layers: Vec<LayerCost>,
    pub params: u64,
    pub trainable_params: u64,
    pub flops: u64,
}

impl CostReport {
    pub fn new<T: Float>(m: &ModelGraph<T>, side: usize) -> Result<Self> {
        let layers = m.net.layer_costs(side)?;
        Ok(Self {
            model: m.name().to_string(),
            input: [3, side, side],
            params: layers.iter().map(|l| l.params).sum(),
            trainable_params: m.params.trainable_numel() as u64,
            flops: layers.iter().map(|l| l.macs).sum(),
            layers,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("cost report serializes")
    }

    /// Aligned text table: layer, kind, output shape, params, FLOPs, then totals.
    pub fn to_table(&self) -> String {
        let shape = |s: &[usize; 3]| format!("{}x{}x{}", s[1], s[2], s[0]);
        let name_w = self.layers.iter().map(|l| l.name.len()).max().unwrap_or(0).max(5);
        let kind_w = self.layers.iter().map(|l| l.kind.len()).max().unwrap_or(0).max(4);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<name_w$}  {:<kind_w$}  {:>14}  {:>12}  {:>15}",
            "layer", "kind", "output", "params", "flops"
        );
        for l in &self.layers {
            let _ = writeln!(
                out,
                "{:<name_w$}  {:<kind_w$}  {:>14}  {:>12}  {:>15}",
                l.name,
                l.kind,
                shape(&l.out_shape),
                l.params,
                l.macs
            );
        }
        let _ = writeln!(out, "model: {}  input: {}", self.model, shape(&self.input));
        let _ = writeln!(
            out,
            "params: {} ({:.2}M, trainable {})",
            self.params,
            self.params as f64 / 1e6,
            self.trainable_params
        );
        let _ = writeln!(out, "flops: {} ({:.2}G)", self.flops, self.flops as f64 / 1e9);
        out
    }
}

/// Counts at the model's own input size.
pub fn count_params<T: Float>(m: &ModelGraph<T>) -> Result<CostReport> {
    CostReport::new(m, m.spec().input_size)
}

/// Counts at input side `side`.
pub fn count_flops<T: Float>(m: &ModelGraph<T>, side: usize) -> Result<CostReport> {
    CostReport::new(m, side)
}
