use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::arch::{build, ArchConfig, ArchSpec, Bottleneck};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::train::{steps_per_epoch, train_epochs, TrainConfig, TrainOptions};

/// Outcome of evaluating one configuration on the reduced network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub config: ArchConfig,
    /// Top-1 accuracy on the held-out split after the last epoch, in [0, 1].
    pub val_accuracy: f64,
    pub params: u64,
    pub flops: u64,
    pub epochs_trained: usize,
    pub wall_seconds: f64,
    pub seed: u64,
    /// Training produced a non-finite loss or gradient; accuracy is 0.
    #[serde(default)]
    pub diverged: bool,
}

/// Anything that scores a configuration.
pub trait Objective {
    fn evaluate(&mut self, config: &ArchConfig, seed: u64) -> Result<TrialRecord>;
}

fn reduced_costs(config: &ArchConfig, classes: usize) -> Result<(u64, u64)> {
    let spec = ArchSpec::reduced(*config, classes);
    let m = build::<f32>(&spec, 0)?;
    let r = m.cost_report(spec.input_size)?;
    Ok((r.params, r.flops))
}

/// Trains the reduced network for `cfg.epochs` epochs on a train split and
/// scores it on the held-out split.
pub struct TrainingObjective {
    pub train: Dataset,
    pub val: Dataset,
    pub cfg: TrainConfig,
}

impl TrainingObjective {
    /// Holds out `holdout` of `data` (seeded shuffle) for scoring.
    pub fn new(data: &Dataset, holdout: f64, cfg: TrainConfig, split_seed: u64) -> Result<Self> {
        if !(holdout > 0.0 && holdout < 1.0) {
            return Err(Error::Search(format!("holdout fraction {holdout} must lie in (0, 1)")));
        }
        if cfg.epochs == 0 {
            return Err(Error::Search("evaluation budget must be at least one epoch".into()));
        }
        cfg.validate()?;
        let (train, val) = data.split(holdout, split_seed);
        if train.is_empty() || val.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(Self { train, val, cfg })
    }
}

impl Objective for TrainingObjective {
    fn evaluate(&mut self, config: &ArchConfig, seed: u64) -> Result<TrialRecord> {
        let started = Instant::now();
        let classes = self.train.num_classes;
        let (params, flops) = reduced_costs(config, classes)?;
        let mut model = build::<f32>(&ArchSpec::reduced(*config, classes), seed)?;
        let cfg = TrainConfig { seed, ..self.cfg.clone() };
        let (val_accuracy, epochs_trained, diverged) =
            match train_epochs(&mut model, &self.train, &self.val, &cfg, &TrainOptions::default()) {
                Ok(r) => (r.history.last().map_or(0.0, |h| h.val_top1), r.history.len(), false),
                Err(Error::Divergence { step, .. }) => {
                    (0.0, step / steps_per_epoch(self.train.len(), cfg.batch_size), true)
                }
                Err(Error::NonFiniteGradient(_)) => (0.0, 0, true),
                Err(e) => return Err(e),
            };
        Ok(TrialRecord {
            config: *config,
            val_accuracy,
            params,
            flops,
            epochs_trained,
            wall_seconds: started.elapsed().as_secs_f64(),
            seed,
            diverged,
        })
    }
}

/// Deterministic stand-in with a known optimum: accuracy is
/// `base + bottleneck_weight·[bottleneck on] + kernel_middle_weight·[kernel_middle = 5]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlantedObjective {
    pub base: f64,
    pub bottleneck_weight: f64,
    pub kernel_middle_weight: f64,
    pub num_classes: usize,
}

impl Default for PlantedObjective {
    fn default() -> Self {
        Self {
            base: 0.5,
            bottleneck_weight: 0.3,
            kernel_middle_weight: 0.05,
            num_classes: 10,
        }
    }
}

impl PlantedObjective {
    pub fn score(&self, c: &ArchConfig) -> f64 {
        let on = |b: bool| if b { 1.0 } else { 0.0 };
        self.base
            + self.bottleneck_weight * on(c.bottleneck == Bottleneck::Inverted)
            + self.kernel_middle_weight * on(c.kernel_middle == 5)
    }

    /// Whether `c` attains the maximum score.
    pub fn is_optimal(&self, c: &ArchConfig) -> bool {
        (c.bottleneck == Bottleneck::Inverted || self.bottleneck_weight <= 0.0)
            && (c.kernel_middle == 5 || self.kernel_middle_weight <= 0.0)
    }
}

impl Objective for PlantedObjective {
    fn evaluate(&mut self, config: &ArchConfig, seed: u64) -> Result<TrialRecord> {
        let (params, flops) = reduced_costs(config, self.num_classes)?;
        Ok(TrialRecord {
            config: *config,
            val_accuracy: self.score(config),
            params,
            flops,
            epochs_trained: 0,
            wall_seconds: 0.0,
            seed,
            diverged: false,
        })
    }
}

/// One JSON object per line.
pub fn write_history(path: &Path, history: &[TrialRecord]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for t in history {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history(path: &Path) -> Result<Vec<TrialRecord>> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: TrialRecord = serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?;
        if !(0.0..=1.0).contains(&t.val_accuracy) {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("line {}: accuracy {} outside [0, 1]", i + 1, t.val_accuracy),
            });
        }
        out.push(t);
    }
    Ok(out)
}
