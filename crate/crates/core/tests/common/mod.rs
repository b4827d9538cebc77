//! Reference implementations shared by the integration tests and the
//! acceptance suite. The oracles in this file never call the code they check.
#![allow(dead_code)]

pub mod fixtures;
pub mod gradcheck;

use std::f64::consts::PI;

/// NT-Xent by exhaustive enumeration: rows `2k` and `2k+1` are positives,
/// every other row is a negative, similarities are cosines over `t`.
pub fn nt_xent_brute(z: &[f64], dim: usize, t: f64) -> f64 {
    let n = z.len() / dim;
    let row = |i: usize| &z[i * dim..(i + 1) * dim];
    let cos = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let mut total = 0.0;
    for i in 0..n {
        let partner = if i % 2 == 0 { i + 1 } else { i - 1 };
        let num = (cos(row(i), row(partner)) / t).exp();
        let mut den = 0.0;
        for k in 0..n {
            if k != i {
                den += (cos(row(i), row(k)) / t).exp();
            }
        }
        total += -(num / den).ln();
    }
    total / n as f64
}

/// What a plateau schedule did at one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceStep {
    pub lr: f64,
    pub decayed: bool,
    pub stopped: bool,
}

/// Replays the plateau rule from the epoch of the last improvement: the
/// rate is multiplied by `factor` on every `patience_decay`-th epoch since
/// that improvement, and training stops on the `patience_stop`-th.
pub fn plateau_trace(
    losses: &[f64],
    lr0: f64,
    factor: f64,
    patience_decay: usize,
    patience_stop: usize,
    min_delta: f64,
) -> Vec<TraceStep> {
    let mut out = Vec::new();
    let mut best = f64::INFINITY;
    let mut last_improvement: Option<usize> = None;
    let mut lr = lr0;
    for (epoch, &loss) in losses.iter().enumerate() {
        if loss < best - min_delta {
            best = loss;
            last_improvement = Some(epoch);
            out.push(TraceStep {
                lr,
                decayed: false,
                stopped: false,
            });
            continue;
        }
        let since = match last_improvement {
            Some(e) => epoch - e,
            None => epoch + 1,
        };
        let decayed = since % patience_decay == 0;
        if decayed {
            lr *= factor;
        }
        let stopped = since >= patience_stop;
        out.push(TraceStep { lr, decayed, stopped });
        if stopped {
            break;
        }
    }
    out
}

/// Slaney mel scale, written from its definition: linear below 1 kHz
/// (3 mels per 200 Hz), logarithmic above with 27 mels per factor 6.4.
fn slaney_mel(hz: f64) -> f64 {
    if hz < 1000.0 {
        3.0 * hz / 200.0
    } else {
        15.0 + 27.0 * (hz / 1000.0).ln() / 6.4f64.ln()
    }
}

fn slaney_hz(mel: f64) -> f64 {
    if mel < 15.0 {
        200.0 * mel / 3.0
    } else {
        1000.0 * 6.4f64.powf((mel - 15.0) / 27.0)
    }
}

/// Area-normalized triangular filter weights, `n_mels × (n_fft/2 + 1)`.
pub fn slaney_filterbank(sr: f64, n_fft: usize, n_mels: usize, f_max: f64) -> Vec<Vec<f64>> {
    let top = slaney_mel(f_max);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| slaney_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    (0..n_mels)
        .map(|m| {
            (0..=n_fft / 2)
                .map(|k| {
                    let f = k as f64 * sr / n_fft as f64;
                    let w = if f <= edges[m] || f >= edges[m + 2] {
                        0.0
                    } else if f <= edges[m + 1] {
                        (f - edges[m]) / (edges[m + 1] - edges[m])
                    } else {
                        (edges[m + 2] - f) / (edges[m + 2] - edges[m + 1])
                    };
                    w * 2.0 / (edges[m + 2] - edges[m])
                })
                .collect()
        })
        .collect()
}

/// `log(1 + mel energy)` of frame `t` by direct DFT of the reflect-padded,
/// periodic-Hann-windowed signal.
pub fn direct_log_mel_frame(x: &[f32], t: usize, n_fft: usize, hop: usize, bank: &[Vec<f64>]) -> Vec<f64> {
    let pad = n_fft / 2;
    let n = x.len() as i64;
    let sample = |i: i64| -> f64 {
        let mut j = i;
        if j < 0 {
            j = -j;
        }
        if j >= n {
            j = 2 * (n - 1) - j;
        }
        x[j as usize] as f64
    };
    let frame: Vec<f64> = (0..n_fft)
        .map(|i| {
            let w = 0.5 * (1.0 - (2.0 * PI * i as f64 / n_fft as f64).cos());
            w * sample((t * hop + i) as i64 - pad as i64)
        })
        .collect();
    let mags: Vec<f64> = (0..=n_fft / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in frame.iter().enumerate() {
                let a = -2.0 * PI * (k * i % n_fft) as f64 / n_fft as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            (re * re + im * im).sqrt()
        })
        .collect();
    bank.iter()
        .map(|f| f.iter().zip(&mags).map(|(w, m)| w * m).sum::<f64>().ln_1p())
        .collect()
}

/// Pearson chi-square statistic of observed counts against expected probabilities.
pub fn chi_square(observed: &[usize], probs: &[f64]) -> f64 {
    let total: usize = observed.iter().sum();
    observed
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let e = p * total as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum()
}
