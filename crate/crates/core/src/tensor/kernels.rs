//! Raw-slice kernels behind the tape operations.
//!
//! Convolutions take one of three routes: a direct loop for depthwise
//! convolutions, a single GEMM per sample for 1×1 stride-1 convolutions, and
//! im2col + GEMM for everything else. Work is split over batch samples with
//! rayon; weight gradients are reduced over fixed-size sample chunks in chunk
//! order, so results do not depend on the thread count.

use rayon::prelude::*;

use super::Float;
use crate::error::{Error, Result};

/// Samples per partial weight-gradient buffer.
const WGRAD_CHUNK: usize = 4;

/// `C[m×n] (+)= op(A)[m×k] · op(B)[k×n]`, all row-major and contiguous.
///
/// With `a_t` the slice `a` holds `A` transposed (`k×m`); likewise `b_t`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Float>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_t: bool,
    b: &[T],
    b_t: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c[..m * n].fill(T::zero());
        }
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the asserts above bound every index the strides can reach.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output extent of a strided window: `floor((len + 2·pad − k)/stride) + 1`.
pub fn out_extent(len: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || len + 2 * pad < k {
        return None;
    }
    Some((len + 2 * pad - k) / stride + 1)
}

/// Output positions `lo..hi` whose input coordinate `o·stride + offset − pad`
/// lands inside `0..in_len`.
#[inline]
fn valid_range(out_len: usize, in_len: usize, stride: usize, pad: usize, offset: usize) -> (usize, usize) {
    let lo = if pad > offset {
        (pad - offset).div_ceil(stride).min(out_len)
    } else {
        0
    };
    let hi = if in_len + pad > offset {
        ((in_len - 1 + pad - offset) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub k_h: usize,
    pub k_w: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(x: [usize; 4], w: &[usize], stride: usize, padding: usize, groups: usize) -> Result<Self> {
        let [batch, in_ch, in_h, in_w] = x;
        let &[out_ch, w_in, k_h, k_w] = w else {
            return Err(Error::config(format!("conv weight must be rank-4, got {w:?}")));
        };
        if groups == 0 || stride == 0 {
            return Err(Error::config(format!(
                "conv stride ({stride}) and groups ({groups}) must be positive"
            )));
        }
        if in_ch % groups != 0 || out_ch % groups != 0 {
            return Err(Error::config(format!(
                "channels in={in_ch} out={out_ch} not divisible by groups={groups}"
            )));
        }
        if w_in != in_ch / groups {
            return Err(Error::config(format!(
                "conv weight {w:?} expects {w_in} input channels per group, input has {in_ch} over {groups} groups"
            )));
        }
        let (Some(out_h), Some(out_w)) = (
            out_extent(in_h, k_h, stride, padding),
            out_extent(in_w, k_w, stride, padding),
        ) else {
            return Err(Error::config(format!(
                "kernel {k_h}x{k_w} with padding {padding} does not fit input {in_h}x{in_w}"
            )));
        };
        Ok(Self {
            batch,
            in_ch,
            in_h,
            in_w,
            out_ch,
            k_h,
            k_w,
            stride,
            padding,
            groups,
            out_h,
            out_w,
        })
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_ch && self.out_ch == self.in_ch
    }

    pub fn is_pointwise(&self) -> bool {
        self.k_h == 1 && self.k_w == 1 && self.stride == 1 && self.padding == 0 && self.groups == 1
    }

    pub fn out_shape(&self) -> [usize; 4] {
        [self.batch, self.out_ch, self.out_h, self.out_w]
    }

    fn in_plane(&self) -> usize {
        self.in_h * self.in_w
    }

    fn out_plane(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Rows of the im2col matrix for one group.
    fn col_rows(&self) -> usize {
        self.in_ch / self.groups * self.k_h * self.k_w
    }

    fn weight_len(&self) -> usize {
        self.out_ch * self.in_ch / self.groups * self.k_h * self.k_w
    }
}

fn im2col<T: Float>(g: &ConvGeom, x_group: &[T], cols: &mut [T]) {
    let cin_g = g.in_ch / g.groups;
    let ohw = g.out_plane();
    cols.fill(T::zero());
    for c in 0..cin_g {
        let plane = &x_group[c * g.in_plane()..(c + 1) * g.in_plane()];
        for i in 0..g.k_h {
            let (oh_lo, oh_hi) = valid_range(g.out_h, g.in_h, g.stride, g.padding, i);
            for j in 0..g.k_w {
                let (ow_lo, ow_hi) = valid_range(g.out_w, g.in_w, g.stride, g.padding, j);
                let row = &mut cols[((c * g.k_h + i) * g.k_w + j) * ohw..][..ohw];
                for oh in oh_lo..oh_hi {
                    let ih = oh * g.stride + i - g.padding;
                    let src = &plane[ih * g.in_w..(ih + 1) * g.in_w];
                    let dst = &mut row[oh * g.out_w..(oh + 1) * g.out_w];
                    for ow in ow_lo..ow_hi {
                        dst[ow] = src[ow * g.stride + j - g.padding];
                    }
                }
            }
        }
    }
}

fn col2im<T: Float>(g: &ConvGeom, cols: &[T], dx_group: &mut [T]) {
    let cin_g = g.in_ch / g.groups;
    let ohw = g.out_plane();
    for c in 0..cin_g {
        let plane = &mut dx_group[c * g.in_plane()..(c + 1) * g.in_plane()];
        for i in 0..g.k_h {
            let (oh_lo, oh_hi) = valid_range(g.out_h, g.in_h, g.stride, g.padding, i);
            for j in 0..g.k_w {
                let (ow_lo, ow_hi) = valid_range(g.out_w, g.in_w, g.stride, g.padding, j);
                let row = &cols[((c * g.k_h + i) * g.k_w + j) * ohw..][..ohw];
                for oh in oh_lo..oh_hi {
                    let ih = oh * g.stride + i - g.padding;
                    let src = &row[oh * g.out_w..(oh + 1) * g.out_w];
                    let dst = &mut plane[ih * g.in_w..(ih + 1) * g.in_w];
                    for ow in ow_lo..ow_hi {
                        dst[ow * g.stride + j - g.padding] += src[ow];
                    }
                }
            }
        }
    }
}

/// One depthwise plane: `out += conv(x, kernel)`.
fn depthwise_plane<T: Float>(g: &ConvGeom, x: &[T], kernel: &[T], out: &mut [T]) {
    for i in 0..g.k_h {
        let (oh_lo, oh_hi) = valid_range(g.out_h, g.in_h, g.stride, g.padding, i);
        for j in 0..g.k_w {
            let (ow_lo, ow_hi) = valid_range(g.out_w, g.in_w, g.stride, g.padding, j);
            if ow_lo == ow_hi {
                continue;
            }
            let wv = kernel[i * g.k_w + j];
            for oh in oh_lo..oh_hi {
                let ih = oh * g.stride + i - g.padding;
                let src = &x[ih * g.in_w..(ih + 1) * g.in_w];
                let dst = &mut out[oh * g.out_w..(oh + 1) * g.out_w];
                if g.stride == 1 {
                    let off = j as isize - g.padding as isize;
                    let s = &src[(ow_lo as isize + off) as usize..(ow_hi as isize + off) as usize];
                    for (d, &v) in dst[ow_lo..ow_hi].iter_mut().zip(s) {
                        *d += wv * v;
                    }
                } else {
                    for ow in ow_lo..ow_hi {
                        dst[ow] += wv * src[ow * g.stride + j - g.padding];
                    }
                }
            }
        }
    }
}

fn depthwise_plane_dx<T: Float>(g: &ConvGeom, dy: &[T], kernel: &[T], dx: &mut [T]) {
    for i in 0..g.k_h {
        let (oh_lo, oh_hi) = valid_range(g.out_h, g.in_h, g.stride, g.padding, i);
        for j in 0..g.k_w {
            let (ow_lo, ow_hi) = valid_range(g.out_w, g.in_w, g.stride, g.padding, j);
            let wv = kernel[i * g.k_w + j];
            for oh in oh_lo..oh_hi {
                let ih = oh * g.stride + i - g.padding;
                let src = &dy[oh * g.out_w..(oh + 1) * g.out_w];
                let dst = &mut dx[ih * g.in_w..(ih + 1) * g.in_w];
                for ow in ow_lo..ow_hi {
                    dst[ow * g.stride + j - g.padding] += wv * src[ow];
                }
            }
        }
    }
}

fn depthwise_plane_dw<T: Float>(g: &ConvGeom, x: &[T], dy: &[T], dkernel: &mut [T]) {
    for i in 0..g.k_h {
        let (oh_lo, oh_hi) = valid_range(g.out_h, g.in_h, g.stride, g.padding, i);
        for j in 0..g.k_w {
            let (ow_lo, ow_hi) = valid_range(g.out_w, g.in_w, g.stride, g.padding, j);
            let mut acc = T::zero();
            for oh in oh_lo..oh_hi {
                let ih = oh * g.stride + i - g.padding;
                let src = &x[ih * g.in_w..(ih + 1) * g.in_w];
                let d = &dy[oh * g.out_w..(oh + 1) * g.out_w];
                for ow in ow_lo..ow_hi {
                    acc += d[ow] * src[ow * g.stride + j - g.padding];
                }
            }
            dkernel[i * g.k_w + j] += acc;
        }
    }
}

pub fn conv2d_forward<T: Float>(g: &ConvGeom, x: &[T], w: &[T], bias: Option<&[T]>) -> Vec<T> {
    let in_sample = g.in_ch * g.in_plane();
    let out_sample = g.out_ch * g.out_plane();
    let ohw = g.out_plane();
    let mut out = vec![T::zero(); g.batch * out_sample];
    if out_sample == 0 {
        return out;
    }
    out.par_chunks_mut(out_sample).enumerate().for_each(|(n, out_n)| {
        let x_n = &x[n * in_sample..(n + 1) * in_sample];
        if g.is_depthwise() {
            let kk = g.k_h * g.k_w;
            for c in 0..g.in_ch {
                depthwise_plane(
                    g,
                    &x_n[c * g.in_plane()..(c + 1) * g.in_plane()],
                    &w[c * kk..(c + 1) * kk],
                    &mut out_n[c * ohw..(c + 1) * ohw],
                );
            }
        } else if g.is_pointwise() {
            gemm(g.out_ch, g.in_ch, ohw, w, false, x_n, false, out_n, false);
        } else {
            let rows = g.col_rows();
            let cin_g = g.in_ch / g.groups;
            let cout_g = g.out_ch / g.groups;
            let mut cols = vec![T::zero(); rows * ohw];
            for grp in 0..g.groups {
                im2col(g, &x_n[grp * cin_g * g.in_plane()..(grp + 1) * cin_g * g.in_plane()], &mut cols);
                gemm(
                    cout_g,
                    rows,
                    ohw,
                    &w[grp * cout_g * rows..(grp + 1) * cout_g * rows],
                    false,
                    &cols,
                    false,
                    &mut out_n[grp * cout_g * ohw..(grp + 1) * cout_g * ohw],
                    false,
                );
            }
        }
        if let Some(b) = bias {
            for (c, plane) in out_n.chunks_mut(ohw).enumerate() {
                let bv = b[c];
                plane.iter_mut().for_each(|v| *v += bv);
            }
        }
    });
    out
}

pub struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

pub fn conv2d_backward<T: Float>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    dy: &[T],
    need_dx: bool,
    need_dw: bool,
    need_db: bool,
) -> ConvGrads<T> {
    let in_sample = g.in_ch * g.in_plane();
    let out_sample = g.out_ch * g.out_plane();
    let ohw = g.out_plane();
    let rows = g.col_rows();
    let cin_g = g.in_ch / g.groups;
    let cout_g = g.out_ch / g.groups;
    let kk = g.k_h * g.k_w;

    let dx = need_dx.then(|| {
        let mut dx = vec![T::zero(); g.batch * in_sample];
        if in_sample == 0 {
            return dx;
        }
        dx.par_chunks_mut(in_sample).enumerate().for_each(|(n, dx_n)| {
            let dy_n = &dy[n * out_sample..(n + 1) * out_sample];
            if g.is_depthwise() {
                for c in 0..g.in_ch {
                    depthwise_plane_dx(
                        g,
                        &dy_n[c * ohw..(c + 1) * ohw],
                        &w[c * kk..(c + 1) * kk],
                        &mut dx_n[c * g.in_plane()..(c + 1) * g.in_plane()],
                    );
                }
            } else if g.is_pointwise() {
                gemm(g.in_ch, g.out_ch, ohw, w, true, dy_n, false, dx_n, false);
            } else {
                let mut cols = vec![T::zero(); rows * ohw];
                for grp in 0..g.groups {
                    gemm(
                        rows,
                        cout_g,
                        ohw,
                        &w[grp * cout_g * rows..(grp + 1) * cout_g * rows],
                        true,
                        &dy_n[grp * cout_g * ohw..(grp + 1) * cout_g * ohw],
                        false,
                        &mut cols,
                        false,
                    );
                    col2im(
                        g,
                        &cols,
                        &mut dx_n[grp * cin_g * g.in_plane()..(grp + 1) * cin_g * g.in_plane()],
                    );
                }
            }
        });
        dx
    });

    let dw = need_dw.then(|| {
        let wlen = g.weight_len();
        let n_chunks = g.batch.div_ceil(WGRAD_CHUNK);
        let partials: Vec<Vec<T>> = (0..n_chunks)
            .into_par_iter()
            .map(|chunk| {
                let mut dw = vec![T::zero(); wlen];
                let mut cols = if g.is_depthwise() || g.is_pointwise() {
                    Vec::new()
                } else {
                    vec![T::zero(); rows * ohw]
                };
                let end = ((chunk + 1) * WGRAD_CHUNK).min(g.batch);
                for n in chunk * WGRAD_CHUNK..end {
                    let x_n = &x[n * in_sample..(n + 1) * in_sample];
                    let dy_n = &dy[n * out_sample..(n + 1) * out_sample];
                    if g.is_depthwise() {
                        for c in 0..g.in_ch {
                            depthwise_plane_dw(
                                g,
                                &x_n[c * g.in_plane()..(c + 1) * g.in_plane()],
                                &dy_n[c * ohw..(c + 1) * ohw],
                                &mut dw[c * kk..(c + 1) * kk],
                            );
                        }
                    } else if g.is_pointwise() {
                        gemm(g.out_ch, ohw, g.in_ch, dy_n, false, x_n, true, &mut dw, true);
                    } else {
                        for grp in 0..g.groups {
                            im2col(
                                g,
                                &x_n[grp * cin_g * g.in_plane()..(grp + 1) * cin_g * g.in_plane()],
                                &mut cols,
                            );
                            gemm(
                                cout_g,
                                ohw,
                                rows,
                                &dy_n[grp * cout_g * ohw..(grp + 1) * cout_g * ohw],
                                false,
                                &cols,
                                true,
                                &mut dw[grp * cout_g * rows..(grp + 1) * cout_g * rows],
                                true,
                            );
                        }
                    }
                }
                dw
            })
            .collect();
        let mut total = vec![T::zero(); wlen];
        for p in partials {
            total.iter_mut().zip(p).for_each(|(t, v)| *t += v);
        }
        total
    });

    let db = need_db.then(|| {
        let mut db = vec![T::zero(); g.out_ch];
        for n in 0..g.batch {
            for (c, plane) in dy[n * out_sample..(n + 1) * out_sample].chunks(ohw).enumerate() {
                db[c] += plane.iter().copied().sum::<T>();
            }
        }
        db
    });

    ConvGrads { dx, dw, db }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PoolGeom {
    pub batch: usize,
    pub channels: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl PoolGeom {
    pub fn new(x: [usize; 4], kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        let [batch, channels, in_h, in_w] = x;
        if padding >= kernel {
            return Err(Error::config(format!("pool padding {padding} must be below kernel {kernel}")));
        }
        let (Some(out_h), Some(out_w)) = (
            out_extent(in_h, kernel, stride, padding),
            out_extent(in_w, kernel, stride, padding),
        ) else {
            return Err(Error::config(format!(
                "pool window {kernel} stride {stride} does not fit input {in_h}x{in_w}"
            )));
        };
        Ok(Self {
            batch,
            channels,
            in_h,
            in_w,
            kernel,
            stride,
            padding,
            out_h,
            out_w,
        })
    }
}

/// Max pooling over padded windows (padding never wins). Returns the output
/// and, per output element, the in-plane index of the first maximum in scan
/// order.
pub fn max_pool_forward<T: Float>(g: &PoolGeom, x: &[T]) -> (Vec<T>, Vec<u32>) {
    let planes = g.batch * g.channels;
    let ihw = g.in_h * g.in_w;
    let ohw = g.out_h * g.out_w;
    let mut out = vec![T::zero(); planes * ohw];
    let mut arg = vec![0u32; planes * ohw];
    for p in 0..planes {
        let xp = &x[p * ihw..(p + 1) * ihw];
        for oh in 0..g.out_h {
            for ow in 0..g.out_w {
                let mut best = T::neg_infinity();
                let mut best_idx = 0usize;
                for i in 0..g.kernel {
                    let ih = (oh * g.stride + i) as isize - g.padding as isize;
                    if ih < 0 || ih >= g.in_h as isize {
                        continue;
                    }
                    for j in 0..g.kernel {
                        let iw = (ow * g.stride + j) as isize - g.padding as isize;
                        if iw < 0 || iw >= g.in_w as isize {
                            continue;
                        }
                        let idx = ih as usize * g.in_w + iw as usize;
                        if xp[idx] > best {
                            best = xp[idx];
                            best_idx = idx;
                        }
                    }
                }
                out[p * ohw + oh * g.out_w + ow] = best;
                arg[p * ohw + oh * g.out_w + ow] = best_idx as u32;
            }
        }
    }
    (out, arg)
}

pub fn max_pool_backward<T: Float>(g: &PoolGeom, argmax: &[u32], dy: &[T]) -> Vec<T> {
    let planes = g.batch * g.channels;
    let ihw = g.in_h * g.in_w;
    let ohw = g.out_h * g.out_w;
    let mut dx = vec![T::zero(); planes * ihw];
    for p in 0..planes {
        for o in 0..ohw {
            dx[p * ihw + argmax[p * ohw + o] as usize] += dy[p * ohw + o];
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // A = [[1,2],[3,4]], B = [[5,6],[7,8]]
        let a = [1.0f64, 2.0, 3.0, 4.0];
        let b = [5.0f64, 6.0, 7.0, 8.0];
        let mut c = [0.0f64; 4];
        gemm(2, 2, 2, &a, false, &b, false, &mut c, false);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, &mut c, false);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, false);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
        gemm(2, 2, 2, &a, false, &b, true, &mut c, true);
        assert_eq!(c, [34.0, 46.0, 78.0, 106.0]);
    }

    #[test]
    fn valid_range_matches_brute_force() {
        for in_len in 1..9 {
            for stride in 1..4 {
                for pad in 0..5 {
                    for off in 0..9 {
                        let Some(out_len) = out_extent(in_len, off + 1, stride, pad) else {
                            continue;
                        };
                        let (lo, hi) = valid_range(out_len, in_len, stride, pad, off);
                        for o in 0..out_len {
                            let pos = (o * stride + off) as isize - pad as isize;
                            let inside = pos >= 0 && pos < in_len as isize;
                            assert_eq!(inside, (lo..hi).contains(&o), "in={in_len} s={stride} p={pad} off={off} o={o}");
                            assert!(lo <= hi && hi <= out_len);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn geometry_rejects_bad_groups() {
        assert!(ConvGeom::new([1, 3, 4, 4], &[4, 1, 3, 3], 1, 1, 2).is_err());
        assert!(ConvGeom::new([1, 4, 4, 4], &[4, 1, 3, 3], 1, 1, 4).is_ok());
        assert!(ConvGeom::new([1, 4, 4, 4], &[4, 2, 3, 3], 1, 1, 4).is_err());
        assert!(ConvGeom::new([1, 4, 2, 2], &[4, 4, 5, 5], 1, 0, 1).is_err());
    }

    #[test]
    fn max_pool_prefers_first_maximum() {
        let g = PoolGeom::new([1, 1, 2, 2], 2, 2, 0).unwrap();
        let (out, arg) = max_pool_forward(&g, &[3.0f64, 3.0, 3.0, 3.0]);
        assert_eq!(out, vec![3.0]);
        assert_eq!(arg, vec![0]);
    }
}
