//! Row-major layer primitives with hand-written backward passes. Activations
//! are `[rows, cols]` slices; weights are stored `[in, out]` so `y = x·W + b`.

use super::real::{gemm, Mat, Real};

pub const LN_EPS: f64 = 1e-5;
pub const BN_EPS: f64 = 1e-5;

fn c<T: Real>(v: f64) -> T {
    T::from_f64_lossy(v)
}

/// `y = x·W + b`.
pub fn linear_fwd<T: Real>(x: &[T], rows: usize, din: usize, w: &[T], b: &[T], dout: usize, y: &mut [T]) {
    debug_assert_eq!(w.len(), din * dout);
    for row in y[..rows * dout].chunks_exact_mut(dout) {
        row.copy_from_slice(b);
    }
    gemm(T::one(), Mat::dense(x, rows, din), Mat::dense(w, din, dout), T::one(), y, dout);
}

/// Accumulates `dW += xᵀ·dy`, `db += Σ dy`, and overwrites `dx = dy·Wᵀ` when requested.
#[allow(clippy::too_many_arguments)]
pub fn linear_bwd<T: Real>(
    x: &[T],
    rows: usize,
    din: usize,
    w: &[T],
    dout: usize,
    dy: &[T],
    dx: Option<&mut [T]>,
    dw: &mut [T],
    db: &mut [T],
) {
    gemm(T::one(), Mat::dense(x, rows, din).t(), Mat::dense(dy, rows, dout), T::one(), dw, dout);
    for row in dy[..rows * dout].chunks_exact(dout) {
        for (a, &g) in db.iter_mut().zip(row) {
            *a += g;
        }
    }
    if let Some(dx) = dx {
        gemm(T::one(), Mat::dense(dy, rows, dout), Mat::dense(w, din, dout).t(), T::zero(), dx, din);
    }
}

/// Per-row layer normalization. `stats` receives `(mean, rstd)` per row.
pub fn layernorm_fwd<T: Real>(x: &[T], dim: usize, g: &[T], b: &[T], y: &mut [T], stats: &mut [(T, T)]) {
    let n = c::<T>(dim as f64);
    for ((xr, yr), st) in x.chunks_exact(dim).zip(y.chunks_exact_mut(dim)).zip(stats.iter_mut()) {
        let mean = xr.iter().copied().sum::<T>() / n;
        let var = xr.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
        let rstd = T::one() / (var + c(LN_EPS)).sqrt();
        for i in 0..dim {
            yr[i] = (xr[i] - mean) * rstd * g[i] + b[i];
        }
        *st = (mean, rstd);
    }
}

/// Overwrites `dx`; accumulates `dg`, `db`.
#[allow(clippy::too_many_arguments)]
pub fn layernorm_bwd<T: Real>(
    x: &[T],
    dim: usize,
    g: &[T],
    stats: &[(T, T)],
    dy: &[T],
    dx: &mut [T],
    dg: &mut [T],
    db: &mut [T],
) {
    let n = c::<T>(dim as f64);
    let mut dxhat = vec![T::zero(); dim];
    for (((xr, dyr), dxr), &(mean, rstd)) in x
        .chunks_exact(dim)
        .zip(dy.chunks_exact(dim))
        .zip(dx.chunks_exact_mut(dim))
        .zip(stats)
    {
        let mut s1 = T::zero();
        let mut s2 = T::zero();
        for i in 0..dim {
            let xhat = (xr[i] - mean) * rstd;
            dg[i] += dyr[i] * xhat;
            db[i] += dyr[i];
            dxhat[i] = dyr[i] * g[i];
            s1 += dxhat[i];
            s2 += dxhat[i] * xhat;
        }
        s1 /= n;
        s2 /= n;
        for i in 0..dim {
            let xhat = (xr[i] - mean) * rstd;
            dxr[i] = rstd * (dxhat[i] - s1 - xhat * s2);
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// `tanh` through a single `exp`, several times faster than the libm call.
fn fast_tanh<T: Real>(u: T) -> T {
    T::one() - c::<T>(2.0) / (T::one() + (u + u).exp())
}

/// Tanh-approximated GELU.
pub fn gelu<T: Real>(x: T) -> T {
    let u = c::<T>(GELU_C) * (x + c::<T>(GELU_A) * x * x * x);
    c::<T>(0.5) * x * (T::one() + fast_tanh(u))
}

pub fn gelu_grad<T: Real>(x: T) -> T {
    let u = c::<T>(GELU_C) * (x + c::<T>(GELU_A) * x * x * x);
    let t = fast_tanh(u);
    let du = c::<T>(GELU_C) * (T::one() + c::<T>(3.0 * GELU_A) * x * x);
    c::<T>(0.5) * (T::one() + t) + c::<T>(0.5) * x * (T::one() - t * t) * du
}

/// Numerically stable in-place softmax over each row.
pub fn softmax_rows<T: Real>(x: &mut [T], cols: usize) {
    for row in x.chunks_exact_mut(cols) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
}

/// Multi-head self-attention for one sequence. `qkv` is `[n, 3·width]` with
/// Q, K, V blocks side by side; `probs` receives `[heads, n, n]`; `out` is `[n, width]`.
pub fn attention_fwd<T: Real>(qkv: &[T], n: usize, width: usize, heads: usize, probs: &mut [T], out: &mut [T]) {
    let dh = width / heads;
    let ld = 3 * width;
    let scale = c::<T>(1.0 / (dh as f64).sqrt());
    for h in 0..heads {
        let q = Mat::rm(&qkv[h * dh..], n, dh, ld);
        let k = Mat::rm(&qkv[width + h * dh..], n, dh, ld);
        let v = Mat::rm(&qkv[2 * width + h * dh..], n, dh, ld);
        let p = &mut probs[h * n * n..(h + 1) * n * n];
        gemm(scale, q, k.t(), T::zero(), p, n);
        softmax_rows(p, n);
        gemm(T::one(), Mat::dense(p, n, n), v, T::zero(), &mut out[h * dh..], width);
    }
}

/// Backward of [`attention_fwd`]; overwrites `dqkv`. `scratch` needs `2·n·n` values.
#[allow(clippy::too_many_arguments)]
pub fn attention_bwd<T: Real>(
    qkv: &[T],
    n: usize,
    width: usize,
    heads: usize,
    probs: &[T],
    dout: &[T],
    dqkv: &mut [T],
    scratch: &mut [T],
) {
    let dh = width / heads;
    let ld = 3 * width;
    let scale = c::<T>(1.0 / (dh as f64).sqrt());
    let (dp, _) = scratch.split_at_mut(n * n);
    for h in 0..heads {
        let q = Mat::rm(&qkv[h * dh..], n, dh, ld);
        let k = Mat::rm(&qkv[width + h * dh..], n, dh, ld);
        let v = Mat::rm(&qkv[2 * width + h * dh..], n, dh, ld);
        let p = &probs[h * n * n..(h + 1) * n * n];
        let d_o = Mat::rm(&dout[h * dh..], n, dh, width);
        // dV = Pᵀ·dO
        gemm(T::one(), Mat::dense(p, n, n).t(), d_o, T::zero(), &mut dqkv[2 * width + h * dh..], ld);
        // dP = dO·Vᵀ, then dS = P ⊙ (dP − rowsum(dP ⊙ P)), folded with the scale.
        gemm(T::one(), d_o, v.t(), T::zero(), dp, n);
        for (dpr, pr) in dp.chunks_exact_mut(n).zip(p.chunks_exact(n)) {
            let dot: T = dpr.iter().zip(pr).map(|(&a, &b)| a * b).sum();
            for (d, &pv) in dpr.iter_mut().zip(pr) {
                *d = pv * (*d - dot) * scale;
            }
        }
        let ds = Mat::dense(dp, n, n);
        gemm(T::one(), ds, k, T::zero(), &mut dqkv[h * dh..], ld);
        gemm(T::one(), ds.t(), q, T::zero(), &mut dqkv[width + h * dh..], ld);
    }
}

/// Training-mode batch normalization over rows. `xhat` and `rstd` are cached
/// for the backward pass; `batch_mean`/`batch_var` (biased) are returned
/// through the out-parameters for running-statistics updates.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_train_fwd<T: Real>(
    x: &[T],
    rows: usize,
    dim: usize,
    g: &[T],
    b: &[T],
    y: &mut [T],
    xhat: &mut [T],
    rstd: &mut [T],
    batch_mean: &mut [T],
    batch_var: &mut [T],
) {
    let n = c::<T>(rows as f64);
    batch_mean.fill(T::zero());
    batch_var.fill(T::zero());
    for row in x[..rows * dim].chunks_exact(dim) {
        for (m, &v) in batch_mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in batch_mean.iter_mut() {
        *m /= n;
    }
    for row in x[..rows * dim].chunks_exact(dim) {
        for ((s, &v), &m) in batch_var.iter_mut().zip(row).zip(batch_mean.iter()) {
            *s += (v - m) * (v - m);
        }
    }
    for (i, s) in batch_var.iter_mut().enumerate() {
        *s /= n;
        rstd[i] = T::one() / (*s + c(BN_EPS)).sqrt();
    }
    for r in 0..rows {
        for i in 0..dim {
            let k = r * dim + i;
            xhat[k] = (x[k] - batch_mean[i]) * rstd[i];
            y[k] = xhat[k] * g[i] + b[i];
        }
    }
}

/// Inference-mode batch normalization with running statistics.
pub fn batchnorm_eval_fwd<T: Real>(x: &[T], dim: usize, g: &[T], b: &[T], mean: &[T], var: &[T], y: &mut [T]) {
    for (xr, yr) in x.chunks_exact(dim).zip(y.chunks_exact_mut(dim)) {
        for i in 0..dim {
            yr[i] = (xr[i] - mean[i]) / (var[i] + c(BN_EPS)).sqrt() * g[i] + b[i];
        }
    }
}

/// Backward of [`batchnorm_train_fwd`]; overwrites `dx`, accumulates `dg`, `db`.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_train_bwd<T: Real>(
    xhat: &[T],
    rows: usize,
    dim: usize,
    g: &[T],
    rstd: &[T],
    dy: &[T],
    dx: &mut [T],
    dg: &mut [T],
    db: &mut [T],
) {
    let n = c::<T>(rows as f64);
    let mut sum_dxhat = vec![T::zero(); dim];
    let mut sum_dxhat_xhat = vec![T::zero(); dim];
    for r in 0..rows {
        for i in 0..dim {
            let k = r * dim + i;
            dg[i] += dy[k] * xhat[k];
            db[i] += dy[k];
            let d = dy[k] * g[i];
            sum_dxhat[i] += d;
            sum_dxhat_xhat[i] += d * xhat[k];
        }
    }
    for r in 0..rows {
        for i in 0..dim {
            let k = r * dim + i;
            let d = dy[k] * g[i];
            dx[k] = rstd[i] / n * (n * d - sum_dxhat[i] - xhat[k] * sum_dxhat_xhat[i]);
        }
    }
}
