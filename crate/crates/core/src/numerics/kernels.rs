//! Forward/backward kernels behind the graph ops.
//!
//! Layout convention: the batch dimension is trailing, so the innermost loops
//! run over contiguous batch lanes. Reductions use a fixed 8-lane accumulator
//! split; the summation order is defined by this file alone, never by thread
//! scheduling, so results are bit-identical for any thread count.

use rayon::prelude::*;

use super::tensor::Scalar;
use super::threads;

#[inline]
pub fn axpy<T: Scalar>(y: &mut [T], x: &[T], a: T) {
    debug_assert_eq!(y.len(), x.len());
    for (yv, xv) in y.iter_mut().zip(x) {
        *yv = *yv + a * *xv;
    }
}

#[inline]
pub fn dot<T: Scalar>(x: &[T], y: &[T]) -> T {
    debug_assert_eq!(x.len(), y.len());
    let n = x.len();
    let chunks = n / 8;
    let mut acc = [T::zero(); 8];
    for c in 0..chunks {
        let xb = &x[c * 8..c * 8 + 8];
        let yb = &y[c * 8..c * 8 + 8];
        for l in 0..8 {
            acc[l] = acc[l] + xb[l] * yb[l];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for i in chunks * 8..n {
        s = s + x[i] * y[i];
    }
    s
}

/// Run `f(row_index, row_slice)` over consecutive `row_len` chunks of `out`,
/// in parallel when the kernel thread count allows. Rows are disjoint, so the
/// arithmetic per row is identical either way.
pub fn for_rows<T: Send>(out: &mut [T], row_len: usize, f: impl Fn(usize, &mut [T]) + Sync) {
    debug_assert_eq!(out.len() % row_len, 0);
    if threads() > 1 && out.len() / row_len > 1 {
        out.par_chunks_mut(row_len)
            .enumerate()
            .for_each(|(i, row)| f(i, row));
    } else {
        for (i, row) in out.chunks_mut(row_len).enumerate() {
            f(i, row);
        }
    }
}

// ── matmul ───────────────────────────────────────────────────────────

/// y (m,n) = a (m,k) · b (k,n)
pub fn matmul<T: Scalar>(a: &[T], b: &[T], y: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(y.len(), m * n);
    for_rows(y, n, |i, yrow| {
        yrow.iter_mut().for_each(|v| *v = T::zero());
        let arow = &a[i * k..(i + 1) * k];
        for (kk, &av) in arow.iter().enumerate() {
            axpy(yrow, &b[kk * n..(kk + 1) * n], av);
        }
    });
}

/// da += dy · bᵀ ; db += aᵀ · dy
pub fn matmul_backward<T: Scalar>(
    a: &[T],
    b: &[T],
    dy: &[T],
    da: &mut [T],
    db: &mut [T],
    m: usize,
    k: usize,
    n: usize,
) {
    for_rows(da, k, |i, darow| {
        let dyrow = &dy[i * n..(i + 1) * n];
        for (kk, dav) in darow.iter_mut().enumerate() {
            *dav = *dav + dot(dyrow, &b[kk * n..(kk + 1) * n]);
        }
    });
    for_rows(db, n, |kk, dbrow| {
        for i in 0..m {
            axpy(dbrow, &dy[i * n..(i + 1) * n], a[i * k + kk]);
        }
    });
}

// ── conv1d ───────────────────────────────────────────────────────────

/// Valid output length of a padded strided cross-correlation, if positive.
pub fn conv_out_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Output-time bounds [lo, hi) for which the tap `kk` reads inside the input.
#[inline]
fn tap_bounds(t_in: usize, t_out: usize, stride: usize, padding: usize, kk: usize) -> (usize, usize) {
    if kk >= t_in + padding {
        return (0, 0);
    }
    let lo = if padding > kk {
        (padding - kk).div_ceil(stride)
    } else {
        0
    };
    let hi = ((t_in + padding - kk - 1) / stride + 1).min(t_out);
    (lo.min(hi), hi)
}

/// x (ci,t_in,b) ⋆ w (co,ci,k) + bias (co) → y (co,t_out,b)
#[allow(clippy::too_many_arguments)]
pub fn conv1d<T: Scalar>(
    x: &[T],
    w: &[T],
    bias: &[T],
    y: &mut [T],
    ci_n: usize,
    co_n: usize,
    t_in: usize,
    t_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
    b: usize,
) {
    debug_assert_eq!(y.len(), co_n * t_out * b);
    for_rows(y, t_out * b, |co, yrow| {
        yrow.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..ci_n {
            let xrow = &x[ci * t_in * b..(ci + 1) * t_in * b];
            let wrow = &w[(co * ci_n + ci) * k..(co * ci_n + ci + 1) * k];
            for (kk, &wv) in wrow.iter().enumerate() {
                let (lo, hi) = tap_bounds(t_in, t_out, stride, padding, kk);
                for t in lo..hi {
                    let ti = t * stride + kk - padding;
                    axpy(&mut yrow[t * b..(t + 1) * b], &xrow[ti * b..(ti + 1) * b], wv);
                }
            }
        }
    });
}

#[allow(clippy::too_many_arguments)]
pub fn conv1d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    dx: &mut [T],
    dw: &mut [T],
    dbias: &mut [T],
    ci_n: usize,
    co_n: usize,
    t_in: usize,
    t_out: usize,
    k: usize,
    stride: usize,
    padding: usize,
    b: usize,
) {
    for_rows(dx, t_in * b, |ci, dxrow| {
        for co in 0..co_n {
            let dyrow = &dy[co * t_out * b..(co + 1) * t_out * b];
            let wrow = &w[(co * ci_n + ci) * k..(co * ci_n + ci + 1) * k];
            for (kk, &wv) in wrow.iter().enumerate() {
                let (lo, hi) = tap_bounds(t_in, t_out, stride, padding, kk);
                for t in lo..hi {
                    let ti = t * stride + kk - padding;
                    axpy(&mut dxrow[ti * b..(ti + 1) * b], &dyrow[t * b..(t + 1) * b], wv);
                }
            }
        }
    });
    for_rows(dw, ci_n * k, |co, dwrow| {
        let dyrow = &dy[co * t_out * b..(co + 1) * t_out * b];
        for ci in 0..ci_n {
            let xrow = &x[ci * t_in * b..(ci + 1) * t_in * b];
            for kk in 0..k {
                let (lo, hi) = tap_bounds(t_in, t_out, stride, padding, kk);
                let mut acc = T::zero();
                for t in lo..hi {
                    let ti = t * stride + kk - padding;
                    acc = acc + dot(&dyrow[t * b..(t + 1) * b], &xrow[ti * b..(ti + 1) * b]);
                }
                dwrow[ci * k + kk] = dwrow[ci * k + kk] + acc;
            }
        }
    });
    for (co, dbv) in dbias.iter_mut().enumerate() {
        let dyrow = &dy[co * t_out * b..(co + 1) * t_out * b];
        let mut acc = T::zero();
        for v in dyrow {
            acc = acc + *v;
        }
        *dbv = *dbv + acc;
    }
}

// ── conv2d ───────────────────────────────────────────────────────────

/// x (ci,h,w,b) ⋆ w (co,ci,kh,kw) + bias (co) → y (co,ho,wo,b)
#[allow(clippy::too_many_arguments)]
pub fn conv2d<T: Scalar>(
    x: &[T],
    w: &[T],
    bias: &[T],
    y: &mut [T],
    ci_n: usize,
    co_n: usize,
    (h_in, w_in): (usize, usize),
    (h_out, w_out): (usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    padding: usize,
    b: usize,
) {
    debug_assert_eq!(y.len(), co_n * h_out * w_out * b);
    for_rows(y, h_out * w_out * b, |co, yplane| {
        yplane.iter_mut().for_each(|v| *v = bias[co]);
        for ci in 0..ci_n {
            let xplane = &x[ci * h_in * w_in * b..(ci + 1) * h_in * w_in * b];
            let wbase = ((co * ci_n) + ci) * kh * kw;
            for r in 0..kh {
                let (rlo, rhi) = tap_bounds(h_in, h_out, stride, padding, r);
                for c in 0..kw {
                    let wv = w[wbase + r * kw + c];
                    let (clo, chi) = tap_bounds(w_in, w_out, stride, padding, c);
                    for ho in rlo..rhi {
                        let hi = ho * stride + r - padding;
                        let yrow = &mut yplane[(ho * w_out + clo) * b..(ho * w_out + chi) * b];
                        let xrow = &xplane[(hi * w_in) * b..(hi + 1) * w_in * b];
                        for (j, wo) in (clo..chi).enumerate() {
                            let wi = wo * stride + c - padding;
                            axpy(
                                &mut yrow[j * b..(j + 1) * b],
                                &xrow[wi * b..(wi + 1) * b],
                                wv,
                            );
                        }
                    }
                }
            }
        }
    });
}

#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    dx: &mut [T],
    dw: &mut [T],
    dbias: &mut [T],
    ci_n: usize,
    co_n: usize,
    (h_in, w_in): (usize, usize),
    (h_out, w_out): (usize, usize),
    (kh, kw): (usize, usize),
    stride: usize,
    padding: usize,
    b: usize,
) {
    for_rows(dx, h_in * w_in * b, |ci, dxplane| {
        for co in 0..co_n {
            let dyplane = &dy[co * h_out * w_out * b..(co + 1) * h_out * w_out * b];
            let wbase = ((co * ci_n) + ci) * kh * kw;
            for r in 0..kh {
                let (rlo, rhi) = tap_bounds(h_in, h_out, stride, padding, r);
                for c in 0..kw {
                    let wv = w[wbase + r * kw + c];
                    let (clo, chi) = tap_bounds(w_in, w_out, stride, padding, c);
                    for ho in rlo..rhi {
                        let hi = ho * stride + r - padding;
                        for wo in clo..chi {
                            let wi = wo * stride + c - padding;
                            axpy(
                                &mut dxplane[(hi * w_in + wi) * b..(hi * w_in + wi + 1) * b],
                                &dyplane[(ho * w_out + wo) * b..(ho * w_out + wo + 1) * b],
                                wv,
                            );
                        }
                    }
                }
            }
        }
    });
    for_rows(dw, ci_n * kh * kw, |co, dwplane| {
        let dyplane = &dy[co * h_out * w_out * b..(co + 1) * h_out * w_out * b];
        for ci in 0..ci_n {
            let xplane = &x[ci * h_in * w_in * b..(ci + 1) * h_in * w_in * b];
            for r in 0..kh {
                let (rlo, rhi) = tap_bounds(h_in, h_out, stride, padding, r);
                for c in 0..kw {
                    let (clo, chi) = tap_bounds(w_in, w_out, stride, padding, c);
                    let mut acc = T::zero();
                    for ho in rlo..rhi {
                        let hi = ho * stride + r - padding;
                        for wo in clo..chi {
                            let wi = wo * stride + c - padding;
                            acc = acc
                                + dot(
                                    &dyplane[(ho * w_out + wo) * b..(ho * w_out + wo + 1) * b],
                                    &xplane[(hi * w_in + wi) * b..(hi * w_in + wi + 1) * b],
                                );
                        }
                    }
                    dwplane[ci * kh * kw + r * kw + c] = dwplane[ci * kh * kw + r * kw + c] + acc;
                }
            }
        }
    });
    for (co, dbv) in dbias.iter_mut().enumerate() {
        let dyplane = &dy[co * h_out * w_out * b..(co + 1) * h_out * w_out * b];
        let mut acc = T::zero();
        for v in dyplane {
            acc = acc + *v;
        }
        *dbv = *dbv + acc;
    }
}

// ── group normalization ──────────────────────────────────────────────

/// x (c,s,b) normalized per (group, batch lane) over the group's c×s block,
/// then scaled/shifted per channel. Caches mean and 1/std, both (g,b).
#[allow(clippy::too_many_arguments)]
pub fn group_norm<T: Scalar>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    y: &mut [T],
    mean: &mut [T],
    rstd: &mut [T],
    c_n: usize,
    s_n: usize,
    groups: usize,
    b: usize,
    eps: T,
) {
    let cg = c_n / groups;
    let n = T::from_f64((cg * s_n) as f64);
    for g in 0..groups {
        let mrow = &mut mean[g * b..(g + 1) * b];
        mrow.iter_mut().for_each(|v| *v = T::zero());
        for c in g * cg..(g + 1) * cg {
            for s in 0..s_n {
                axpy(mrow, &x[(c * s_n + s) * b..(c * s_n + s + 1) * b], T::one());
            }
        }
        mrow.iter_mut().for_each(|v| *v = *v / n);
        let rrow = &mut rstd[g * b..(g + 1) * b];
        rrow.iter_mut().for_each(|v| *v = T::zero());
        for c in g * cg..(g + 1) * cg {
            for s in 0..s_n {
                let xrow = &x[(c * s_n + s) * b..(c * s_n + s + 1) * b];
                for (l, rv) in rrow.iter_mut().enumerate() {
                    let d = xrow[l] - mean[g * b + l];
                    *rv = *rv + d * d;
                }
            }
        }
        for rv in rrow.iter_mut() {
            *rv = T::one() / (*rv / n + eps).sqrt();
        }
        for c in g * cg..(g + 1) * cg {
            for s in 0..s_n {
                let xrow = &x[(c * s_n + s) * b..(c * s_n + s + 1) * b];
                let yrow = &mut y[(c * s_n + s) * b..(c * s_n + s + 1) * b];
                for l in 0..b {
                    yrow[l] = gamma[c] * (xrow[l] - mean[g * b + l]) * rstd[g * b + l] + beta[c];
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn group_norm_backward<T: Scalar>(
    x: &[T],
    gamma: &[T],
    mean: &[T],
    rstd: &[T],
    dy: &[T],
    dx: &mut [T],
    dgamma: &mut [T],
    dbeta: &mut [T],
    c_n: usize,
    s_n: usize,
    groups: usize,
    b: usize,
) {
    let cg = c_n / groups;
    let n = T::from_f64((cg * s_n) as f64);
    // per-(g,b) sums of dŷ and dŷ·x̂ where dŷ = γ_c·dy
    let mut s1 = vec![T::zero(); b];
    let mut s2 = vec![T::zero(); b];
    for g in 0..groups {
        s1.iter_mut().for_each(|v| *v = T::zero());
        s2.iter_mut().for_each(|v| *v = T::zero());
        for c in g * cg..(g + 1) * cg {
            for s in 0..s_n {
                let i0 = (c * s_n + s) * b;
                for l in 0..b {
                    let xhat = (x[i0 + l] - mean[g * b + l]) * rstd[g * b + l];
                    let dyhat = gamma[c] * dy[i0 + l];
                    s1[l] = s1[l] + dyhat;
                    s2[l] = s2[l] + dyhat * xhat;
                }
            }
        }
        for c in g * cg..(g + 1) * cg {
            let mut dg = T::zero();
            let mut db = T::zero();
            for s in 0..s_n {
                let i0 = (c * s_n + s) * b;
                for l in 0..b {
                    let xhat = (x[i0 + l] - mean[g * b + l]) * rstd[g * b + l];
                    let dyhat = gamma[c] * dy[i0 + l];
                    dx[i0 + l] = dx[i0 + l]
                        + rstd[g * b + l] * (dyhat - s1[l] / n - xhat * s2[l] / n);
                    dg = dg + dy[i0 + l] * xhat;
                    db = db + dy[i0 + l];
                }
            }
            dgamma[c] = dgamma[c] + dg;
            dbeta[c] = dbeta[c] + db;
        }
    }
}

// ── FiLM ─────────────────────────────────────────────────────────────

/// y[c,t,l] = scale[c,l]·x[c,t,l] + shift[c,l]
pub fn film<T: Scalar>(x: &[T], scale: &[T], shift: &[T], y: &mut [T], c_n: usize, t_n: usize, b: usize) {
    for c in 0..c_n {
        for t in 0..t_n {
            let i0 = (c * t_n + t) * b;
            for l in 0..b {
                y[i0 + l] = scale[c * b + l] * x[i0 + l] + shift[c * b + l];
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn film_backward<T: Scalar>(
    x: &[T],
    scale: &[T],
    dy: &[T],
    dx: &mut [T],
    dscale: &mut [T],
    dshift: &mut [T],
    c_n: usize,
    t_n: usize,
    b: usize,
) {
    for c in 0..c_n {
        for t in 0..t_n {
            let i0 = (c * t_n + t) * b;
            for l in 0..b {
                dx[i0 + l] = dx[i0 + l] + scale[c * b + l] * dy[i0 + l];
                dscale[c * b + l] = dscale[c * b + l] + x[i0 + l] * dy[i0 + l];
                dshift[c * b + l] = dshift[c * b + l] + dy[i0 + l];
            }
        }
    }
}

// ── activations ──────────────────────────────────────────────────────

#[inline]
fn softplus<T: Scalar>(x: T) -> T {
    let hi = T::from_f64(20.0);
    if x > hi {
        x
    } else if x < -hi {
        x.exp()
    } else {
        (T::one() + x.exp()).ln()
    }
}

#[inline]
pub fn mish_value<T: Scalar>(x: T) -> T {
    x * softplus(x).tanh()
}

#[inline]
pub fn mish_grad<T: Scalar>(x: T) -> T {
    let t = softplus(x).tanh();
    let sig = T::one() / (T::one() + (-x).exp());
    t + x * (T::one() - t * t) * sig
}

pub fn mish<T: Scalar>(x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = mish_value(xv);
    }
}

pub fn mish_backward<T: Scalar>(x: &[T], dy: &[T], dx: &mut [T]) {
    for ((dxv, &xv), &dyv) in dx.iter_mut().zip(x).zip(dy) {
        *dxv = *dxv + dyv * mish_grad(xv);
    }
}

pub fn leaky_relu<T: Scalar>(x: &[T], y: &mut [T], slope: T) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = if xv >= T::zero() { xv } else { slope * xv };
    }
}

pub fn leaky_relu_backward<T: Scalar>(x: &[T], dy: &[T], dx: &mut [T], slope: T) {
    for ((dxv, &xv), &dyv) in dx.iter_mut().zip(x).zip(dy) {
        *dxv = *dxv + dyv * if xv >= T::zero() { T::one() } else { slope };
    }
}

// ── misc ─────────────────────────────────────────────────────────────

pub fn upsample2<T: Scalar>(x: &[T], y: &mut [T], c_n: usize, t_n: usize, b: usize) {
    for c in 0..c_n {
        for t in 0..t_n {
            let src = &x[(c * t_n + t) * b..(c * t_n + t + 1) * b];
            let d0 = (c * 2 * t_n + 2 * t) * b;
            y[d0..d0 + b].copy_from_slice(src);
            y[d0 + b..d0 + 2 * b].copy_from_slice(src);
        }
    }
}

pub fn upsample2_backward<T: Scalar>(dy: &[T], dx: &mut [T], c_n: usize, t_n: usize, b: usize) {
    for c in 0..c_n {
        for t in 0..t_n {
            let s0 = (c * 2 * t_n + 2 * t) * b;
            let drow = &mut dx[(c * t_n + t) * b..(c * t_n + t + 1) * b];
            for l in 0..b {
                drow[l] = drow[l] + dy[s0 + l] + dy[s0 + b + l];
            }
        }
    }
}

/// Mean of squared differences.
pub fn mse<T: Scalar>(pred: &[T], target: &[T]) -> T {
    let mut acc = T::zero();
    for (&p, &t) in pred.iter().zip(target) {
        let d = p - t;
        acc = acc + d * d;
    }
    acc / T::from_f64(pred.len() as f64)
}

pub fn mse_backward<T: Scalar>(pred: &[T], target: &[T], dl: T, dpred: &mut [T], dtarget: &mut [T]) {
    let c = dl * T::from_f64(2.0 / pred.len() as f64);
    for i in 0..pred.len() {
        let d = c * (pred[i] - target[i]);
        dpred[i] = dpred[i] + d;
        dtarget[i] = dtarget[i] - d;
    }
}
