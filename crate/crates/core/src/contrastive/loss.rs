//! Normalized temperature-scaled cross-entropy over a batch of positive
//! pairs stored at indices (2m, 2m+1).

use crate::error::{Error, Result};
use crate::nn::Real;

pub const DEFAULT_TEMPERATURE: f64 = 0.2;

fn unit_rows(z: &[f64], dim: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = z.len() / dim;
    let mut u = vec![0.0; z.len()];
    let mut norms = vec![0.0; n];
    for i in 0..n {
        let row = &z[i * dim..(i + 1) * dim];
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite("projection"));
        }
        if norm == 0.0 {
            return Err(Error::ZeroNorm(i));
        }
        norms[i] = norm;
        for (o, &v) in u[i * dim..(i + 1) * dim].iter_mut().zip(row) {
            *o = v / norm;
        }
    }
    Ok((u, norms))
}

fn check(len: usize, dim: usize, temperature: f64) -> Result<usize> {
    if dim == 0 || len % dim != 0 {
        return Err(Error::Shape(format!("{len} values do not form rows of {dim}")));
    }
    let n = len / dim;
    if n < 2 || n % 2 != 0 {
        return Err(Error::Shape(format!("NT-Xent needs an even number ≥ 2 of vectors, got {n}")));
    }
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature {temperature} must be positive")));
    }
    Ok(n)
}

fn positive(i: usize) -> usize {
    i ^ 1
}

/// Mean loss over all 2B ordered positive pairs.
pub fn nt_xent<T: Real>(z: &[T], dim: usize, temperature: f64) -> Result<f64> {
    Ok(nt_xent_with_grad(z, dim, temperature)?.0)
}

/// Loss and its gradient with respect to the (unnormalized) inputs.
pub fn nt_xent_with_grad<T: Real>(z: &[T], dim: usize, temperature: f64) -> Result<(f64, Vec<T>)> {
    let n = check(z.len(), dim, temperature)?;
    let zf: Vec<f64> = z.iter().map(|v| v.to_f64_lossy()).collect();
    let (u, norms) = unit_rows(&zf, dim)?;

    let mut s = vec![0.0; n * n];
    for i in 0..n {
        for k in i..n {
            let dot: f64 = u[i * dim..(i + 1) * dim]
                .iter()
                .zip(&u[k * dim..(k + 1) * dim])
                .map(|(a, b)| a * b)
                .sum();
            s[i * n + k] = dot / temperature;
            s[k * n + i] = dot / temperature;
        }
    }

    // g[i][k] = ∂L/∂s_ik, zero on the diagonal.
    let mut g = vec![0.0; n * n];
    let mut loss = 0.0;
    for i in 0..n {
        let row = &s[i * n..(i + 1) * n];
        let m = (0..n).filter(|&k| k != i).map(|k| row[k]).fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..n).filter(|&k| k != i).map(|k| (row[k] - m).exp()).sum();
        let p = positive(i);
        loss += -(row[p] - m) + denom.ln();
        for k in (0..n).filter(|&k| k != i) {
            let soft = (row[k] - m).exp() / denom;
            g[i * n + k] = (soft - if k == p { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    loss /= n as f64;

    let mut dz = vec![T::zero(); z.len()];
    for i in 0..n {
        let mut du = vec![0.0; dim];
        for k in 0..n {
            let w = (g[i * n + k] + g[k * n + i]) / temperature;
            if w != 0.0 {
                for (d, &v) in du.iter_mut().zip(&u[k * dim..(k + 1) * dim]) {
                    *d += w * v;
                }
            }
        }
        let ui = &u[i * dim..(i + 1) * dim];
        let along: f64 = du.iter().zip(ui).map(|(a, b)| a * b).sum();
        for j in 0..dim {
            dz[i * dim + j] = T::from_f64_lossy((du[j] - ui[j] * along) / norms[i]);
        }
    }
    Ok((loss, dz))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pair_is_zero() {
        let l = nt_xent(&[1.0f64, 2.0, -3.0, 0.5], 2, 0.2).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn scale_invariant() {
        let z = [0.3f64, -1.0, 2.0, 0.1, -0.7, 0.4, 1.1, 1.3];
        let z5: Vec<f64> = z.iter().map(|v| v * 5.0).collect();
        let a = nt_xent(&z, 2, 0.2).unwrap();
        let b = nt_xent(&z5, 2, 0.2).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn rejects_zero_norm_and_odd_batches() {
        assert!(matches!(nt_xent(&[0.0f64, 0.0, 1.0, 0.0], 2, 0.2), Err(Error::ZeroNorm(0))));
        assert!(nt_xent(&[1.0f64, 0.0, 1.0, 0.0, 0.0, 1.0], 2, 0.2).is_err());
        assert!(nt_xent(&[1.0f64, 0.0, 1.0, 0.0], 2, 0.0).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let z: Vec<f64> = (0..24).map(|i| ((i * 37 % 17) as f64 - 8.0) / 5.0).collect();
        let (_, g) = nt_xent_with_grad(&z, 4, 0.2).unwrap();
        for i in 0..z.len() {
            let mut a = z.clone();
            let mut b = z.clone();
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let num = (nt_xent(&a, 4, 0.2).unwrap() - nt_xent(&b, 4, 0.2).unwrap()) / 2e-6;
            assert!((num - g[i]).abs() < 1e-7, "{i}: {num} vs {}", g[i]);
        }
    }
}
