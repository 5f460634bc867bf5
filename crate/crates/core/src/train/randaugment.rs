use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

/// The op pool. Magnitudes `m ∈ [0, 10]` map linearly onto each op's range
/// and `m = 0` is the identity for every op. Signed ops flip direction
/// with probability ½.
///
/// | op | at m = 10 |
/// |---|---|
/// | translate_x / translate_y | ±45% of the side, gray fill |
/// | shear_x / shear_y | ±0.3 shear about the centre |
/// | rotate | ±30° about the centre |
/// | brightness | factor 1 ± 0.9 (blend with black) |
/// | contrast | factor 1 ± 0.9 (blend with mean gray) |
/// | sharpness | factor 1 ± 0.9 (blend with 3×3 smooth filter) |
/// | posterize | keep 8 − ⌊4m/10⌋ bits |
/// | solarize | invert values ≥ 256·(1 − m/10) |
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AugOp {
    TranslateX,
    TranslateY,
    ShearX,
    ShearY,
    Rotate,
    Brightness,
    Contrast,
    Sharpness,
    Posterize,
    Solarize,
}

impl AugOp {
    pub const ALL: [AugOp; 10] = [
        AugOp::TranslateX,
        AugOp::TranslateY,
        AugOp::ShearX,
        AugOp::ShearY,
        AugOp::Rotate,
        AugOp::Brightness,
        AugOp::Contrast,
        AugOp::Sharpness,
        AugOp::Posterize,
        AugOp::Solarize,
    ];
}

const FILL: u8 = 128;

/// HWC 8-bit RGB image view for the ops.
pub struct Image<'a> {
    pub data: &'a mut [u8],
    pub height: usize,
    pub width: usize,
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Nearest-neighbour resampling through the inverse map `dst → src`.
fn warp(img: &mut Image<'_>, inverse: impl Fn(f64, f64) -> (f64, f64)) {
    let (h, w) = (img.height, img.width);
    let src = img.data.to_vec();
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = inverse(x as f64, y as f64);
            let (sx, sy) = (sx.round(), sy.round());
            let dst = &mut img.data[(y * w + x) * 3..(y * w + x) * 3 + 3];
            if sx >= 0.0 && sy >= 0.0 && (sx as usize) < w && (sy as usize) < h {
                let s = (sy as usize * w + sx as usize) * 3;
                dst.copy_from_slice(&src[s..s + 3]);
            } else {
                dst.fill(FILL);
            }
        }
    }
}

fn blend(img: &mut Image<'_>, other: &[u8], factor: f64) {
    for (p, &o) in img.data.iter_mut().zip(other) {
        *p = clamp_u8(o as f64 + factor * (*p as f64 - o as f64));
    }
}

/// Applies `op` at magnitude `m` (clipped to [0, 10]); `sign` is ±1.
pub fn apply_op(img: &mut Image<'_>, op: AugOp, m: f64, sign: f64) {
    let m = m.clamp(0.0, 10.0) / 10.0;
    let (h, w) = (img.height, img.width);
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    match op {
        AugOp::TranslateX => {
            let d = sign * m * 0.45 * w as f64;
            warp(img, |x, y| (x - d, y));
        }
        AugOp::TranslateY => {
            let d = sign * m * 0.45 * h as f64;
            warp(img, |x, y| (x, y - d));
        }
        AugOp::ShearX => {
            let s = sign * m * 0.3;
            warp(img, |x, y| (x - s * (y - cy), y));
        }
        AugOp::ShearY => {
            let s = sign * m * 0.3;
            warp(img, |x, y| (x, y - s * (x - cx)));
        }
        AugOp::Rotate => {
            let (sin, cos) = (sign * m * 30f64.to_radians()).sin_cos();
            warp(img, |x, y| {
                let (dx, dy) = (x - cx, y - cy);
                (cx + cos * dx + sin * dy, cy - sin * dx + cos * dy)
            });
        }
        AugOp::Brightness => {
            let black = vec![0u8; img.data.len()];
            blend(img, &black, 1.0 + sign * 0.9 * m);
        }
        AugOp::Contrast => {
            let n = (h * w).max(1) as f64;
            let mean = img
                .data
                .chunks_exact(3)
                .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
                .sum::<f64>()
                / n;
            let gray = vec![clamp_u8(mean); img.data.len()];
            blend(img, &gray, 1.0 + sign * 0.9 * m);
        }
        AugOp::Sharpness => {
            let smooth = smoothed(img);
            blend(img, &smooth, 1.0 + sign * 0.9 * m);
        }
        AugOp::Posterize => {
            let bits = 8 - (m * 4.0).floor() as u32;
            let mask = (0xFFu32 << (8 - bits)) as u8;
            img.data.iter_mut().for_each(|p| *p &= mask);
        }
        AugOp::Solarize => {
            let threshold = 256.0 * (1.0 - m);
            img.data
                .iter_mut()
                .filter(|p| **p as f64 >= threshold)
                .for_each(|p| *p = 255 - *p);
        }
    }
}

/// 3×3 smoothing with weights `[1 1 1; 1 5 1; 1 1 1]/13`; the border is kept.
fn smoothed(img: &Image<'_>) -> Vec<u8> {
    let (h, w) = (img.height, img.width);
    let src = &img.data;
    let mut out = src.to_vec();
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            for c in 0..3 {
                let mut acc = 0.0;
                for dy in 0..3 {
                    for dx in 0..3 {
                        let wgt = if dy == 1 && dx == 1 { 5.0 } else { 1.0 };
                        acc += wgt * src[((y + dy - 1) * w + x + dx - 1) * 3 + c] as f64;
                    }
                }
                out[(y * w + x) * 3 + c] = clamp_u8(acc / 13.0);
            }
        }
    }
    out
}

/// `num_ops` ops drawn uniformly with replacement, each at magnitude
/// `N(magnitude, std)` clipped to [0, 10].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RandAugment {
    pub magnitude: f64,
    pub std: f64,
    pub num_ops: usize,
}

impl RandAugment {
    pub fn apply(&self, img: &mut Image<'_>, rng: &mut impl Rng) -> Vec<(AugOp, f64)> {
        let mut applied = Vec::with_capacity(self.num_ops);
        for _ in 0..self.num_ops {
            let op = AugOp::ALL[rng.random_range(0..AugOp::ALL.len())];
            let m = if self.std > 0.0 {
                Normal::new(self.magnitude, self.std).expect("finite std").sample(rng)
            } else {
                self.magnitude
            }
            .clamp(0.0, 10.0);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            apply_op(img, op, m, sign);
            applied.push((op, m));
        }
        applied
    }
}
