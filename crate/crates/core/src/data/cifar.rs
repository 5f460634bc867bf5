use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Normalization};
use crate::error::{Error, Result};

const SIDE: usize = 32;
const PIXELS: usize = SIDE * SIDE * 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CifarVariant {
    Cifar10,
    Cifar100,
}

impl CifarVariant {
    /// Label bytes preceding each image: CIFAR-100 stores coarse then fine.
    pub fn label_bytes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 1,
            CifarVariant::Cifar100 => 2,
        }
    }

    pub fn record_len(self) -> usize {
        self.label_bytes() + PIXELS
    }

    pub fn num_classes(self) -> usize {
        match self {
            CifarVariant::Cifar10 => 10,
            CifarVariant::Cifar100 => 100,
        }
    }

    pub fn normalization(self) -> Normalization {
        match self {
            CifarVariant::Cifar10 => Normalization::CIFAR10,
            CifarVariant::Cifar100 => Normalization::CIFAR100,
        }
    }

    fn files(self, split: &str) -> Vec<&'static str> {
        match (self, split) {
            (CifarVariant::Cifar100, "test") => vec!["test.bin"],
            (CifarVariant::Cifar100, _) => vec!["train.bin"],
            (CifarVariant::Cifar10, "test") => vec!["test_batch.bin"],
            (CifarVariant::Cifar10, _) => vec![
                "data_batch_1.bin",
                "data_batch_2.bin",
                "data_batch_3.bin",
                "data_batch_4.bin",
                "data_batch_5.bin",
            ],
        }
    }
}

/// Parses records from an in-memory file. Images are channel-planar in the
/// file and become HWC; the last label byte (fine label) is kept.
pub fn parse_cifar(bytes: &[u8], variant: CifarVariant, path: &Path) -> Result<Dataset> {
    let rec = variant.record_len();
    if bytes.is_empty() || bytes.len() % rec != 0 {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: format!("size {} is not a positive multiple of the {rec}-byte record", bytes.len()),
        });
    }
    let n = bytes.len() / rec;
    let mut images = Vec::with_capacity(n * PIXELS);
    let mut labels = Vec::with_capacity(n);
    let plane = SIDE * SIDE;
    for r in bytes.chunks_exact(rec) {
        let label = r[variant.label_bytes() - 1] as usize;
        if label >= variant.num_classes() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("record {} has label {label}", labels.len()),
            });
        }
        labels.push(label);
        let px = &r[variant.label_bytes()..];
        for i in 0..plane {
            images.extend_from_slice(&[px[i], px[plane + i], px[2 * plane + i]]);
        }
    }
    Dataset::new(
        images,
        labels,
        variant.num_classes(),
        (SIDE, SIDE),
        variant.normalization(),
        "train",
    )
}

/// Loads a CIFAR binary file, or the files of `split` ("train"/"test") when
/// `path` is the extracted directory.
pub fn load_cifar(path: &Path, variant: CifarVariant, split: &str) -> Result<Dataset> {
    let files: Vec<PathBuf> = if path.is_dir() {
        variant.files(split).into_iter().map(|f| path.join(f)).collect()
    } else {
        vec![path.to_path_buf()]
    };
    let mut out: Option<Dataset> = None;
    for f in files {
        let bytes = fs::read(&f).map_err(|e| Error::Format {
            path: f.clone(),
            message: e.to_string(),
        })?;
        let d = parse_cifar(&bytes, variant, &f)?;
        out = Some(match out {
            None => d,
            Some(mut acc) => {
                acc.images.extend(d.images);
                acc.labels.extend(d.labels);
                acc
            }
        });
    }
    let mut d = out.ok_or(Error::EmptyDataset)?;
    d.split = split.to_string();
    Ok(d)
}

/// Writes `data` in the distributor's record layout. CIFAR-100 coarse labels
/// are written as `fine / 5`, which is not the real grouping.
pub fn write_cifar(path: &Path, data: &Dataset, variant: CifarVariant) -> Result<()> {
    if (data.height, data.width) != (SIDE, SIDE) {
        return Err(Error::config("CIFAR records are 32x32"));
    }
    let mut buf = Vec::with_capacity(data.len() * variant.record_len());
    let plane = SIDE * SIDE;
    for i in 0..data.len() {
        if variant == CifarVariant::Cifar100 {
            buf.push((data.labels[i] / 5) as u8);
        }
        buf.push(data.labels[i] as u8);
        let img = data.image(i);
        for c in 0..3 {
            buf.extend((0..plane).map(|p| img[p * 3 + c]));
        }
    }
    fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}
