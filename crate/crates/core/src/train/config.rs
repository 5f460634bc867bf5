use serde::{Deserialize, Serialize};

use crate::arch::Variant;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    Ce,
}

/// Optimization and augmentation settings. `Default` is the T recipe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub min_lr: f64,
    pub randaugment_magnitude: f64,
    pub randaugment_std: f64,
    pub randaugment_ops: usize,
    pub mixup_alpha: f64,
    pub cutmix_alpha: f64,
    pub random_erasing: f64,
    pub label_smoothing: f64,
    pub stoch_depth: f64,
    pub loss: LossKind,
    pub test_crop_ratio: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            weight_decay: 0.02,
            batch_size: 256,
            epochs: 300,
            warmup_epochs: 5,
            min_lr: 1e-6,
            randaugment_magnitude: 7.0,
            randaugment_std: 0.5,
            randaugment_ops: 2,
            mixup_alpha: 0.1,
            cutmix_alpha: 1.0,
            random_erasing: 0.0,
            label_smoothing: 0.0,
            stoch_depth: 0.05,
            loss: LossKind::Bce,
            test_crop_ratio: 0.95,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn for_variant(v: Variant) -> Self {
        match v {
            Variant::NexceptionS => Self {
                learning_rate: 1.4e-3,
                batch_size: 128,
                ..Self::default()
            },
            _ => Self::default(),
        }
    }

    /// Everything off: no augmentation, no mixing, no drop path.
    pub fn plain(self) -> Self {
        Self {
            randaugment_ops: 0,
            mixup_alpha: 0.0,
            cutmix_alpha: 0.0,
            random_erasing: 0.0,
            label_smoothing: 0.0,
            stoch_depth: 0.0,
            test_crop_ratio: 1.0,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::config(m));
        for (name, p) in [
            ("random_erasing", self.random_erasing),
            ("label_smoothing", self.label_smoothing),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return err(format!("{name} = {p} must lie in [0, 1]"));
            }
        }
        if !(0.0..1.0).contains(&self.stoch_depth) {
            return err(format!("stoch_depth = {} must lie in [0, 1)", self.stoch_depth));
        }
        if !(self.test_crop_ratio > 0.0 && self.test_crop_ratio <= 1.0) {
            return err(format!("test_crop_ratio = {} must lie in (0, 1]", self.test_crop_ratio));
        }
        if self.epochs == 0 || self.warmup_epochs >= self.epochs {
            return err(format!(
                "warmup_epochs ({}) must be below epochs ({})",
                self.warmup_epochs, self.epochs
            ));
        }
        if self.batch_size == 0 {
            return err("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return err(format!("learning_rate = {} must be positive", self.learning_rate));
        }
        if !(self.min_lr >= 0.0 && self.min_lr <= self.learning_rate) {
            return err(format!("min_lr = {} must lie in [0, learning_rate]", self.min_lr));
        }
        if !(self.weight_decay >= 0.0) {
            return err(format!("weight_decay = {} must be non-negative", self.weight_decay));
        }
        if !(self.mixup_alpha >= 0.0 && self.cutmix_alpha >= 0.0) {
            return err("mixup_alpha and cutmix_alpha must be non-negative".into());
        }
        if !(0.0..=10.0).contains(&self.randaugment_magnitude) || !(self.randaugment_std >= 0.0) {
            return err("randaugment magnitude must lie in [0, 10] with a non-negative std".into());
        }
        Ok(())
    }

    /// Sets one field from its textual form; the value is parsed as JSON,
    /// falling back to a lowercase string.
    /// Field names accepted by [`TrainConfig::set`].
    pub fn keys() -> Vec<String> {
        match serde_json::to_value(Self::default()) {
            Ok(serde_json::Value::Object(m)) => m.keys().cloned().collect(),
            _ => Vec::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        self.apply(&[(key, value)])
    }

    /// Sets several fields, then validates once, so that intermediate
    /// combinations need not be valid. Nothing changes on error.
    pub fn apply<K: AsRef<str>, V: AsRef<str>>(&mut self, pairs: &[(K, V)]) -> Result<()> {
        let mut v = serde_json::to_value(&*self)?;
        let obj = v.as_object_mut().expect("struct serializes to an object");
        for (key, value) in pairs {
            let (key, value) = (key.as_ref(), value.as_ref());
            if !obj.contains_key(key) {
                return Err(Error::config(format!("unknown training key {key:?}")));
            }
            let parsed = serde_json::from_str(value.trim())
                .unwrap_or_else(|_| serde_json::Value::String(value.trim().to_ascii_lowercase()));
            obj.insert(key.to_string(), parsed);
            serde_json::from_value::<TrainConfig>(serde_json::Value::Object(obj.clone()))
                .map_err(|e| Error::config(format!("{key} = {value:?}: {e}")))?;
        }
        let next: TrainConfig = serde_json::from_value(v)?;
        next.validate()?;
        *self = next;
        Ok(())
    }
}
