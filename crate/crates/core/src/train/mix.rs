use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// `λ ~ Beta(α, α)`, with `λ = 1` at `α = 0`.
pub fn sample_lambda(alpha: f64, rng: &mut impl Rng) -> Result<f64> {
    if alpha < 0.0 || !alpha.is_finite() {
        return Err(Error::config(format!("mixing alpha {alpha} must be finite and non-negative")));
    }
    if alpha == 0.0 {
        return Ok(1.0);
    }
    Ok(Beta::new(alpha, alpha).expect("positive alpha").sample(rng))
}

fn check(x: &Tensor<impl Float>, y: &Tensor<impl Float>) -> Result<[usize; 4]> {
    let d = x.dims4()?;
    if y.rank() != 2 || y.shape()[0] != d[0] {
        return Err(Error::config(format!("targets {:?} do not match batch {:?}", y.shape(), x.shape())));
    }
    Ok(d)
}

/// Row `i` becomes `λ·row_i + (1−λ)·row_{n−1−i}`.
fn mix_rows<T: Float>(t: &Tensor<T>, lambda: f64) -> Tensor<T> {
    let n = t.shape().first().copied().unwrap_or(0);
    let per = t.numel() / n.max(1);
    let (l, r) = (T::of(lambda), T::of(1.0 - lambda));
    let src = t.data();
    let mut out = t.clone();
    for (i, row) in out.data_mut().chunks_mut(per).enumerate() {
        let own = &src[i * per..(i + 1) * per];
        let partner = &src[(n - 1 - i) * per..(n - i) * per];
        for (o, (&a, &b)) in row.iter_mut().zip(own.iter().zip(partner)) {
            *o = l * a + r * b;
        }
    }
    out
}

/// Convex combination of each sample with its partner in the reversed batch.
pub fn mixup_with_lambda<T: Float>(x: &Tensor<T>, y: &Tensor<T>, lambda: f64) -> Result<(Tensor<T>, Tensor<T>)> {
    check(x, y)?;
    Ok((mix_rows(x, lambda), mix_rows(y, lambda)))
}

pub fn mixup<T: Float>(x: &Tensor<T>, y: &Tensor<T>, alpha: f64, rng: &mut impl Rng) -> Result<(Tensor<T>, Tensor<T>, f64)> {
    let lambda = sample_lambda(alpha, rng)?;
    let (x, y) = mixup_with_lambda(x, y, lambda)?;
    Ok((x, y, lambda))
}

/// Half-open pixel box `[y0, y1) × [x0, x1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CutBox {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

impl CutBox {
    pub fn area(&self) -> usize {
        (self.y1 - self.y0) * (self.x1 - self.x0)
    }

    /// Box with side ratios `√(1−λ)` centred at a uniform pixel, clipped.
    pub fn sample(h: usize, w: usize, lambda: f64, rng: &mut impl Rng) -> Self {
        let ratio = (1.0 - lambda).max(0.0).sqrt();
        let (ch, cw) = ((h as f64 * ratio) as usize, (w as f64 * ratio) as usize);
        let cy = rng.random_range(0..h);
        let cx = rng.random_range(0..w);
        Self {
            y0: cy.saturating_sub(ch / 2),
            y1: (cy + ch / 2).min(h),
            x0: cx.saturating_sub(cw / 2),
            x1: (cx + cw / 2).min(w),
        }
    }
}

/// Pastes the partner's `b` region into each sample; targets mix with
/// `λ_adj = 1 − area/(H·W)`, which is returned.
pub fn cutmix_with_box<T: Float>(x: &Tensor<T>, y: &Tensor<T>, b: CutBox) -> Result<(Tensor<T>, Tensor<T>, f64)> {
    let [n, c, h, w] = check(x, y)?;
    if b.y1 > h || b.x1 > w || b.y0 > b.y1 || b.x0 > b.x1 {
        return Err(Error::config(format!("cut box {b:?} outside {h}x{w}")));
    }
    let lambda = 1.0 - b.area() as f64 / (h * w) as f64;
    let src = x.data();
    let mut out = x.clone();
    let o = out.data_mut();
    let per = c * h * w;
    for i in 0..n {
        let p = n - 1 - i;
        for ch in 0..c {
            for yy in b.y0..b.y1 {
                let row = ch * h * w + yy * w;
                o[i * per + row + b.x0..i * per + row + b.x1]
                    .copy_from_slice(&src[p * per + row + b.x0..p * per + row + b.x1]);
            }
        }
    }
    Ok((out, mix_rows(y, lambda), lambda))
}

pub fn cutmix<T: Float>(x: &Tensor<T>, y: &Tensor<T>, alpha: f64, rng: &mut impl Rng) -> Result<(Tensor<T>, Tensor<T>, f64)> {
    let [_, _, h, w] = check(x, y)?;
    let lambda = sample_lambda(alpha, rng)?;
    cutmix_with_box(x, y, CutBox::sample(h, w, lambda, rng))
}

/// Smoothed targets `t·(1−ε) + ε/K`.
pub fn smooth_labels<T: Float>(y: &Tensor<T>, eps: f64) -> Tensor<T> {
    if eps == 0.0 {
        return y.clone();
    }
    let k = y.shape().last().copied().unwrap_or(1) as f64;
    y.map(|t| T::of(t.as_f64() * (1.0 - eps) + eps / k))
}

/// With probability `p`, fills a random rectangle covering 2–33% of the
/// image (aspect ratio in [0.3, 3.3]) with standard normal noise.
pub fn random_erase<T: Float>(img: &mut [T], c: usize, h: usize, w: usize, p: f64, rng: &mut impl Rng) {
    if p <= 0.0 || rng.random::<f64>() >= p {
        return;
    }
    for _ in 0..10 {
        let area = rng.random_range(0.02..0.33) * (h * w) as f64;
        let aspect = rng.random_range(0.3f64.ln()..3.3f64.ln()).exp();
        let eh = (area * aspect).sqrt().round() as usize;
        let ew = (area / aspect).sqrt().round() as usize;
        if eh == 0 || ew == 0 || eh >= h || ew >= w {
            continue;
        }
        let y0 = rng.random_range(0..=h - eh);
        let x0 = rng.random_range(0..=w - ew);
        let normal = rand_distr::StandardNormal;
        for ch in 0..c {
            for yy in y0..y0 + eh {
                for xx in x0..x0 + ew {
                    let v: f64 = normal.sample(rng);
                    img[ch * h * w + yy * w + xx] = T::of(v);
                }
            }
        }
        return;
    }
}
