use serde::Serialize;

use super::space::{one_hot, SearchSpace};
use super::surrogate::{ForestParams, RandomForest};
use super::trial::TrialRecord;
use crate::arch::{ArchConfig, DIMENSION_NAMES};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DimensionImportance {
    pub dimension: &'static str,
    /// Share of the summed variances, in [0, 1].
    pub importance: f64,
    /// Variance of the standardized surrogate predictions along the sweep.
    pub variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LpiReport {
    pub incumbent: ArchConfig,
    pub trials: usize,
    pub dimensions: Vec<DimensionImportance>,
}

impl LpiReport {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.dimensions.iter().find(|d| d.dimension == name).map(|d| d.importance)
    }

    /// Dimension name → importance.
    pub fn to_json(&self) -> String {
        let map: serde_json::Map<String, serde_json::Value> = self
            .dimensions
            .iter()
            .map(|d| (d.dimension.to_string(), d.importance.into()))
            .collect();
        serde_json::to_string_pretty(&map).expect("finite numbers serialize")
    }

    pub fn to_table(&self) -> String {
        let width = DIMENSION_NAMES.iter().map(|n| n.len()).max().unwrap_or(0);
        let mut s = format!("local importance around the incumbent ({} trials)\n", self.trials);
        for d in &self.dimensions {
            s.push_str(&format!("{:<width$}  {:>7.4}\n", d.dimension, d.importance));
        }
        s
    }
}

/// Local hyperparameter importance: fit the surrogate on `history`, sweep
/// each dimension over its domain in `space` with the others held at the
/// incumbent, and normalize the variances of the predictions. All zero when
/// every variance is zero.
pub fn lpi_importance(history: &[TrialRecord], incumbent: &ArchConfig, space: &SearchSpace, seed: u64) -> Result<LpiReport> {
    if history.len() < 2 {
        return Err(Error::Search(format!("importance needs at least 2 trials, got {}", history.len())));
    }
    let x: Vec<Vec<f64>> = history.iter().map(|t| one_hot(&t.config)).collect();
    let y: Vec<f64> = history.iter().map(|t| t.val_accuracy).collect();
    let forest = RandomForest::fit(&x, &y, ForestParams::default(), seed)?;
    let mut variances = Vec::with_capacity(space.num_dimensions());
    for d in 0..space.num_dimensions() {
        let preds: Vec<f64> = space
            .domain(d)
            .iter()
            .map(|&v| Ok(forest.predict_standardized(&one_hot(&incumbent.with_index(d, v)?)).0))
            .collect::<Result<_>>()?;
        let n = preds.len() as f64;
        let m = preds.iter().sum::<f64>() / n;
        variances.push(preds.iter().map(|p| (p - m).powi(2)).sum::<f64>() / n);
    }
    let total: f64 = variances.iter().sum();
    let dimensions = DIMENSION_NAMES
        .iter()
        .zip(variances)
        .map(|(&dimension, variance)| DimensionImportance {
            dimension,
            importance: if total > 0.0 { variance / total } else { 0.0 },
            variance,
        })
        .collect();
    Ok(LpiReport {
        incumbent: *incumbent,
        trials: history.len(),
        dimensions,
    })
}
