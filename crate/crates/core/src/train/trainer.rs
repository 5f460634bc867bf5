use std::path::PathBuf;
use std::time::Instant;

use image::{imageops, ImageBuffer, Rgb};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{LossKind, TrainConfig};
use super::lamb::Lamb;
use super::mix::{cutmix, mixup, random_erase, smooth_labels};
use super::randaugment::{Image, RandAugment};
use super::schedule::lr_at_step;
use crate::arch::ModelGraph;
use crate::data::{save_checkpoint, write_metrics_csv, Dataset, EpochMetrics};
use crate::error::{Error, Result};
use crate::layers::Forward;
use crate::tensor::{Float, Graph, Tensor, Var};

/// SplitMix64 over the parts, so every (seed, epoch, batch, sample) tuple
/// gets an independent stream regardless of worker count.
pub fn seed_for(parts: &[u64]) -> u64 {
    let mut z = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

const MIX_STREAM: u64 = u64::MAX;
const FORWARD_STREAM: u64 = u64::MAX - 1;

/// Bilinear resize of an HWC RGB image.
pub fn resize_rgb(img: &[u8], h: usize, w: usize, nh: usize, nw: usize) -> Vec<u8> {
    if (h, w) == (nh, nw) {
        return img.to_vec();
    }
    let buf: ImageBuffer<Rgb<u8>, Vec<u8>> =
        ImageBuffer::from_raw(w as u32, h as u32, img.to_vec()).expect("buffer matches dimensions");
    imageops::resize(&buf, nw as u32, nh as u32, imageops::FilterType::Triangle).into_raw()
}

/// Shorter side before the centre crop: `round(target / ratio)`.
pub fn eval_resize_side(target: usize, ratio: f64) -> usize {
    (target as f64 / ratio).round() as usize
}

/// Test-time view: resize so the shorter side is `round(target/ratio)`,
/// then take the centred `target×target` crop.
pub fn center_crop_view(img: &[u8], h: usize, w: usize, target: usize, ratio: f64) -> Vec<u8> {
    let short = eval_resize_side(target, ratio);
    let (nh, nw) = if h <= w {
        (short, (w as f64 * short as f64 / h as f64).round() as usize)
    } else {
        ((h as f64 * short as f64 / w as f64).round() as usize, short)
    };
    let resized = resize_rgb(img, h, w, nh, nw);
    let (y0, x0) = ((nh - target) / 2, (nw - target) / 2);
    let mut out = Vec::with_capacity(target * target * 3);
    for y in y0..y0 + target {
        out.extend_from_slice(&resized[(y * nw + x0) * 3..(y * nw + x0 + target) * 3]);
    }
    out
}

/// Whether `label` is among the `k` largest logits, ties going to the
/// lower index.
pub fn in_top_k<T: Float>(row: &[T], label: usize, k: usize) -> bool {
    let target = row[label];
    let ahead = row
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > target || (v == target && j < label))
        .count();
    ahead < k
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvalResult {
    pub top1: f64,
    pub top5: f64,
    pub loss: f64,
    pub count: usize,
}

fn loss_of<T: Float>(g: &mut Graph<T>, logits: Var, targets: &Tensor<T>, kind: LossKind) -> Result<Var> {
    match kind {
        LossKind::Bce => g.bce_soft_loss(logits, targets),
        LossKind::Ce => g.soft_cross_entropy(logits, targets),
    }
}

/// Eval-mode accuracy and mean loss against one-hot targets.
pub fn evaluate<T: Float>(
    model: &mut ModelGraph<T>,
    data: &Dataset,
    crop_ratio: f64,
    loss: LossKind,
    batch: usize,
) -> Result<EvalResult> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let side = model.spec().input_size;
    let (h, w) = (data.height, data.width);
    let (mut top1, mut top5, mut total) = (0usize, 0usize, 0.0f64);
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let per = 3 * side * side;
        let mut x = vec![T::zero(); chunk.len() * per];
        x.par_chunks_mut(per).zip(chunk).for_each(|(out, &i)| {
            let view = if crop_ratio == 1.0 {
                resize_rgb(data.image(i), h, w, side, side)
            } else {
                center_crop_view(data.image(i), h, w, side, crop_ratio)
            };
            data.normalize_into(&view, side, side, out);
        });
        let x = Tensor::new(&[chunk.len(), 3, side, side], x)?;
        let y = data.one_hot::<T>(chunk);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut f = Forward::inference(&mut model.params, &mut rng);
        let xv = f.graph.input(x)?;
        let logits = model.net.forward(&mut f, xv)?;
        let l = loss_of(&mut f.graph, logits, &y, loss)?;
        total += f.graph.value(l).item().as_f64() * chunk.len() as f64;
        let z = f.graph.value(logits);
        let k = data.num_classes;
        for (r, &i) in chunk.iter().enumerate() {
            let row = &z.data()[r * k..(r + 1) * k];
            top1 += in_top_k(row, data.labels[i], 1) as usize;
            top5 += in_top_k(row, data.labels[i], 5) as usize;
        }
    }
    let n = data.len() as f64;
    Ok(EvalResult {
        top1: top1 as f64 / n,
        top5: top5 as f64 / n,
        loss: total / n,
        count: data.len(),
    })
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Fill the `seconds` column with wall time (breaks byte-identical CSVs).
    pub record_time: bool,
    /// Rewritten after every epoch.
    pub metrics_csv: Option<PathBuf>,
    /// Saved whenever validation top-1 improves.
    pub checkpoint: Option<PathBuf>,
    /// Also report eval-mode accuracy on the training set at the end.
    pub eval_train: bool,
    /// Print one line per epoch to stderr.
    pub verbose: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainReport {
    pub history: Vec<EpochMetrics>,
    pub best_top1: f64,
    pub best_epoch: usize,
    pub steps: usize,
    pub steps_per_epoch: usize,
    pub step_losses: Vec<f64>,
    pub step_lrs: Vec<f64>,
    pub train_top1: Option<f64>,
}

/// Batches per epoch. The final partial batch is dropped unless the whole
/// set is smaller than one batch, in which case it forms a single batch.
pub fn steps_per_epoch(n: usize, batch: usize) -> usize {
    (n / batch).max(1)
}

/// Augmented, normalized batch and soft targets for step `b` of `epoch`.
fn make_batch<T: Float>(
    data: &Dataset,
    indices: &[usize],
    side: usize,
    cfg: &TrainConfig,
    epoch: usize,
    b: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (h, w) = (data.height, data.width);
    let per = 3 * side * side;
    let ra = RandAugment {
        magnitude: cfg.randaugment_magnitude,
        std: cfg.randaugment_std,
        num_ops: cfg.randaugment_ops,
    };
    let mut x = vec![T::zero(); indices.len() * per];
    x.par_chunks_mut(per).zip(indices).enumerate().for_each(|(k, (out, &i))| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed_for(&[cfg.seed, epoch as u64, b as u64, k as u64]));
        let mut img = resize_rgb(data.image(i), h, w, side, side);
        ra.apply(
            &mut Image {
                data: &mut img,
                height: side,
                width: side,
            },
            &mut rng,
        );
        data.normalize_into(&img, side, side, out);
        random_erase(out, 3, side, side, cfg.random_erasing, &mut rng);
    });
    let x = Tensor::new(&[indices.len(), 3, side, side], x)?;
    let y = smooth_labels(&data.one_hot::<T>(indices), cfg.label_smoothing);
    let mut rng = ChaCha8Rng::seed_from_u64(seed_for(&[cfg.seed, epoch as u64, b as u64, MIX_STREAM]));
    let use_mixup = match (cfg.mixup_alpha > 0.0, cfg.cutmix_alpha > 0.0) {
        (false, false) => return Ok((x, y)),
        (true, true) => rng.random::<bool>(),
        (m, _) => m,
    };
    let (x, y, _) = if use_mixup {
        mixup(&x, &y, cfg.mixup_alpha, &mut rng)?
    } else {
        cutmix(&x, &y, cfg.cutmix_alpha, &mut rng)?
    };
    Ok((x, y))
}

/// Runs the full recipe: per-step cosine/warmup rate, augmentation, LAMB.
/// A non-finite loss or activation aborts with [`Error::Divergence`].
pub fn train_epochs<T: Float>(
    model: &mut ModelGraph<T>,
    train: &Dataset,
    val: &Dataset,
    cfg: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if train.num_classes != model.spec().num_classes || val.num_classes != model.spec().num_classes {
        return Err(Error::config(format!(
            "dataset has {} classes, model has {}",
            train.num_classes,
            model.spec().num_classes
        )));
    }
    let side = model.spec().input_size;
    let batch = cfg.batch_size.min(train.len());
    let spe = steps_per_epoch(train.len(), batch);
    let mut opt = Lamb::new();
    let mut report = TrainReport {
        history: Vec::with_capacity(cfg.epochs),
        best_top1: f64::NEG_INFINITY,
        best_epoch: 0,
        steps: 0,
        steps_per_epoch: spe,
        step_losses: Vec::new(),
        step_lrs: Vec::new(),
        train_top1: None,
    };
    let saved_drop = model.net.drop_path;
    model.net.drop_path = cfg.stoch_depth;
    let result = (|| -> Result<()> {
        for epoch in 0..cfg.epochs {
            let started = Instant::now();
            let mut order: Vec<usize> = (0..train.len()).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed_for(&[cfg.seed, epoch as u64])));
            let mut epoch_loss = 0.0;
            let first_lr = lr_at_step(report.steps, spe, cfg);
            for b in 0..spe {
                let idx = &order[b * batch..(b + 1) * batch];
                let (x, y) = make_batch::<T>(train, idx, side, cfg, epoch, b)?;
                let lr = lr_at_step(report.steps, spe, cfg);
                model.params.zero_grad();
                let mut rng =
                    ChaCha8Rng::seed_from_u64(seed_for(&[cfg.seed, epoch as u64, b as u64, FORWARD_STREAM]));
                let mut f = Forward::new(&mut model.params, true, &mut rng);
                let xv = f.graph.input(x)?;
                let step = report.steps;
                let diverged = |e: Error| match e {
                    Error::NonFinite { .. } => Error::Divergence { step, loss: f64::NAN },
                    other => other,
                };
                let logits = model.net.forward(&mut f, xv).map_err(diverged)?;
                let loss = loss_of(&mut f.graph, logits, &y, cfg.loss).map_err(diverged)?;
                let value = f.graph.value(loss).item().as_f64();
                if !value.is_finite() {
                    return Err(Error::Divergence {
                        step: report.steps,
                        loss: value,
                    });
                }
                let Forward { mut graph, params, .. } = f;
                graph.backward(loss, params)?;
                opt.step(&mut model.params, lr, cfg.weight_decay)?;
                report.step_losses.push(value);
                report.step_lrs.push(lr);
                report.steps += 1;
                epoch_loss += value;
            }
            let ev = evaluate(model, val, cfg.test_crop_ratio, cfg.loss, cfg.batch_size)?;
            let row = EpochMetrics {
                epoch,
                lr: first_lr,
                train_loss: epoch_loss / spe as f64,
                val_loss: ev.loss,
                val_top1: ev.top1,
                val_top5: ev.top5,
                seconds: if opts.record_time {
                    started.elapsed().as_secs_f64()
                } else {
                    0.0
                },
            };
            if opts.verbose {
                eprintln!(
                    "epoch {:>4}  lr {:.3e}  train_loss {:.4}  val_loss {:.4}  top1 {:.4}  top5 {:.4}",
                    row.epoch, row.lr, row.train_loss, row.val_loss, row.val_top1, row.val_top5
                );
            }
            report.history.push(row);
            if ev.top1 > report.best_top1 {
                report.best_top1 = ev.top1;
                report.best_epoch = epoch;
                if let Some(p) = &opts.checkpoint {
                    save_checkpoint(model, p, serde_json::json!({"epoch": epoch, "val_top1": ev.top1}))?;
                }
            }
            if let Some(p) = &opts.metrics_csv {
                write_metrics_csv(p, &report.history)?;
            }
        }
        if opts.eval_train {
            report.train_top1 = Some(evaluate(model, train, 1.0, cfg.loss, cfg.batch_size)?.top1);
        }
        Ok(())
    })();
    model.net.drop_path = saved_drop;
    result.map(|_| report)
}
