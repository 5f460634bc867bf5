use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Per-channel normalization applied when images become tensors.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Normalization {
    pub const CIFAR100: Self = Self {
        mean: [0.5071, 0.4865, 0.4409],
        std: [0.2673, 0.2564, 0.2762],
    };
    pub const CIFAR10: Self = Self {
        mean: [0.4914, 0.4822, 0.4465],
        std: [0.2470, 0.2435, 0.2616],
    };
    /// Maps bytes to roughly `[-1, 1]`.
    pub const HALF: Self = Self {
        mean: [0.5; 3],
        std: [0.5; 3],
    };
}

/// 8-bit RGB images stored HWC, one after another, with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub images: Vec<u8>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub norm: Normalization,
    pub split: String,
}

impl Dataset {
    pub fn new(
        images: Vec<u8>,
        labels: Vec<usize>,
        num_classes: usize,
        (height, width): (usize, usize),
        norm: Normalization,
        split: &str,
    ) -> Result<Self> {
        let d = Self {
            images,
            labels,
            num_classes,
            height,
            width,
            norm,
            split: split.to_string(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.images.len() != self.labels.len() * self.image_len() {
            return Err(Error::config(format!(
                "{} image bytes for {} labels at {}x{}x3",
                self.images.len(),
                self.labels.len(),
                self.height,
                self.width
            )));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.num_classes) {
            return Err(Error::config(format!("label {bad} outside {} classes", self.num_classes)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image_len(&self) -> usize {
        self.height * self.width * 3
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let n = self.image_len();
        &self.images[i * n..(i + 1) * n]
    }

    pub fn select(&self, indices: &[usize], split: &str) -> Self {
        let mut images = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        Self {
            images,
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            split: split.to_string(),
            ..self.clone_meta()
        }
    }

    fn clone_meta(&self) -> Self {
        Self {
            images: Vec::new(),
            labels: Vec::new(),
            split: self.split.clone(),
            ..*self
        }
    }

    pub fn take(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx, &self.split)
    }

    /// Seeded shuffle, then the first `round(fraction·len)` samples become
    /// the second split.
    pub fn split(&self, fraction: f64, seed: u64) -> (Self, Self) {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let k = ((fraction * self.len() as f64).round() as usize).min(self.len());
        (self.select(&idx[k..], "train"), self.select(&idx[..k], "val"))
    }

    /// Samples whose label is below `k`, with `num_classes = k`.
    pub fn first_classes(&self, k: usize) -> Self {
        let idx: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] < k).collect();
        let mut d = self.select(&idx, &self.split);
        d.num_classes = k.min(self.num_classes);
        d
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// HWC bytes to a normalized `[1, 3, H, W]` slice of `out`.
    pub fn normalize_into<T: Float>(&self, img: &[u8], h: usize, w: usize, out: &mut [T]) {
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let v = img[(y * w + x) * 3 + c] as f32 / 255.0;
                    out[c * h * w + y * w + x] = T::of(((v - self.norm.mean[c]) / self.norm.std[c]) as f64);
                }
            }
        }
    }

    /// Normalized NCHW batch of the given samples, without augmentation.
    pub fn batch<T: Float>(&self, indices: &[usize]) -> Tensor<T> {
        let (h, w) = (self.height, self.width);
        let mut data = vec![T::zero(); indices.len() * 3 * h * w];
        for (b, &i) in indices.iter().enumerate() {
            self.normalize_into(self.image(i), h, w, &mut data[b * 3 * h * w..(b + 1) * 3 * h * w]);
        }
        Tensor::from_parts(vec![indices.len(), 3, h, w], data)
    }

    /// One-hot `[n, num_classes]` targets.
    pub fn one_hot<T: Float>(&self, indices: &[usize]) -> Tensor<T> {
        let k = self.num_classes;
        let mut t = vec![T::zero(); indices.len() * k];
        for (b, &i) in indices.iter().enumerate() {
            t[b * k + self.labels[i]] = T::one();
        }
        Tensor::from_parts(vec![indices.len(), k], t)
    }
}
