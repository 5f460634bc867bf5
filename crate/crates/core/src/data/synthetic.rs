use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Normalization};
use crate::error::{Error, Result};

/// Class-colored noise: every class has a base color and a stripe
/// orientation; each image adds Gaussian pixel noise on top.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub side: usize,
    /// Pixel noise standard deviation in byte units.
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            per_class: 64,
            side: 32,
            noise: 48.0,
            seed: 0,
        }
    }
}

pub fn synthetic_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.num_classes == 0 || spec.num_classes > 256 || spec.side == 0 || !(spec.noise >= 0.0) {
        return Err(Error::config(format!("invalid synthetic dataset spec {spec:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let classes: Vec<([f64; 3], f64)> = (0..spec.num_classes)
        .map(|_| {
            let color = [0; 3].map(|_: i32| rng.random_range(48.0..208.0));
            (color, rng.random_range(0.0..std::f64::consts::PI))
        })
        .collect();
    let noise = Normal::new(0.0, spec.noise).expect("finite noise");
    let s = spec.side;
    let n = spec.num_classes * spec.per_class;
    let mut images = Vec::with_capacity(n * s * s * 3);
    let mut labels = Vec::with_capacity(n);
    // Interleave classes so that any prefix stays balanced.
    for _ in 0..spec.per_class {
        for (label, (color, angle)) in classes.iter().enumerate() {
            let (dy, dx) = angle.sin_cos();
            for y in 0..s {
                for x in 0..s {
                    let stripe = 24.0 * ((x as f64 * dx + y as f64 * dy) * 0.8).sin();
                    for c in color {
                        let v = c + stripe + noise.sample(&mut rng);
                        images.push(v.round().clamp(0.0, 255.0) as u8);
                    }
                }
            }
            labels.push(label);
        }
    }
    Dataset::new(images, labels, spec.num_classes, (s, s), Normalization::HALF, "synthetic")
}
