//! Log-mel front-end: centered STFT (Hann, 800/400), 128 Slaney mel filters
//! over 0–8 kHz, `log(1 + x)` compression and per-segment standardization.

use std::sync::{Arc, OnceLock};

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::clip::{SourceKind, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const FFT_SIZE: usize = 800;
pub const HOP_LENGTH: usize = 400;
pub const N_MELS: usize = 128;
pub const N_FRAMES: usize = 240;
pub const SEGMENT_SAMPLES: usize = 96_000;
const N_BINS: usize = FFT_SIZE / 2 + 1;
const F_MAX: f64 = 8000.0;

/// One standardized 128×240 log-mel matrix, row-major (mel bin, frame).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelSegment {
    pub values: Vec<f32>,
    pub source_track: String,
    pub offset_s: f64,
    pub source_kind: SourceKind,
}

impl MelSegment {
    pub fn new(values: Vec<f32>, source_track: impl Into<String>, offset_s: f64, source_kind: SourceKind) -> Result<Self> {
        if values.len() != N_MELS * N_FRAMES {
            return Err(Error::Shape(format!(
                "mel segment must hold {}x{} values, got {}",
                N_MELS,
                N_FRAMES,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mel segment"));
        }
        Ok(Self {
            values,
            source_track: source_track.into(),
            offset_s,
            source_kind,
        })
    }

    pub fn at(&self, mel: usize, frame: usize) -> f32 {
        self.values[mel * N_FRAMES + frame]
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = (6.4f64).ln() / 27.0;
    if hz >= MIN_LOG_HZ {
        min_log_mel + (hz / MIN_LOG_HZ).ln() / logstep
    } else {
        hz / F_SP
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    const F_SP: f64 = 200.0 / 3.0;
    const MIN_LOG_HZ: f64 = 1000.0;
    let min_log_mel = MIN_LOG_HZ / F_SP;
    let logstep = (6.4f64).ln() / 27.0;
    if mel >= min_log_mel {
        MIN_LOG_HZ * (logstep * (mel - min_log_mel)).exp()
    } else {
        mel * F_SP
    }
}

/// Sparse triangular filter: weights for FFT bins `start..start + weights.len()`.
#[derive(Debug, Clone)]
pub struct MelFilter {
    pub start: usize,
    pub weights: Vec<f64>,
}

/// Reusable STFT plan, window and filterbank.
pub struct MelExtractor {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filters: Vec<MelFilter>,
}

impl std::fmt::Debug for MelExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelExtractor").field("filters", &self.filters.len()).finish()
    }
}

impl Default for MelExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl MelExtractor {
    pub fn new() -> Self {
        let fft = FftPlanner::new().plan_fft_forward(FFT_SIZE);
        // Periodic Hann.
        let window = (0..FFT_SIZE)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / FFT_SIZE as f64).cos())
            .collect();
        Self {
            fft,
            window,
            filters: slaney_filterbank(),
        }
    }

    /// Shared instance.
    pub fn global() -> &'static MelExtractor {
        static INSTANCE: OnceLock<MelExtractor> = OnceLock::new();
        INSTANCE.get_or_init(MelExtractor::new)
    }

    pub fn filters(&self) -> &[MelFilter] {
        &self.filters
    }

    /// Dense filterbank matrix, `N_MELS × (FFT_SIZE/2 + 1)`.
    pub fn dense_filterbank(&self) -> Vec<Vec<f64>> {
        self.filters
            .iter()
            .map(|f| {
                let mut row = vec![0.0; N_BINS];
                row[f.start..f.start + f.weights.len()].copy_from_slice(&f.weights);
                row
            })
            .collect()
    }

    /// STFT magnitudes for every kept frame, `N_FRAMES × N_BINS`.
    pub fn magnitudes(&self, samples: &[f32]) -> Result<Vec<f64>> {
        check_window(samples)?;
        let padded = reflect_pad(samples, FFT_SIZE / 2);
        let mut out = vec![0.0; N_FRAMES * N_BINS];
        let mut buf = vec![Complex::new(0.0, 0.0); FFT_SIZE];
        for t in 0..N_FRAMES {
            let frame = &padded[t * HOP_LENGTH..t * HOP_LENGTH + FFT_SIZE];
            for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&self.window) {
                *b = Complex::new(x * w, 0.0);
            }
            self.fft.process(&mut buf);
            for (k, c) in buf[..N_BINS].iter().enumerate() {
                out[t * N_BINS + k] = c.norm();
            }
        }
        Ok(out)
    }

    /// Log-compressed mel energies before standardization, row-major (mel, frame).
    pub fn log_mel(&self, samples: &[f32]) -> Result<Vec<f64>> {
        let mags = self.magnitudes(samples)?;
        let mut out = vec![0.0; N_MELS * N_FRAMES];
        for (m, filter) in self.filters.iter().enumerate() {
            for t in 0..N_FRAMES {
                let row = &mags[t * N_BINS + filter.start..t * N_BINS + filter.start + filter.weights.len()];
                let e: f64 = row.iter().zip(&filter.weights).map(|(a, w)| a * w).sum();
                out[m * N_FRAMES + t] = e.ln_1p();
            }
        }
        Ok(out)
    }

    /// Standardized log-mel matrix for one 6 s window.
    pub fn compute(&self, samples: &[f32]) -> Result<Vec<f32>> {
        let raw = self.log_mel(samples)?;
        Ok(standardize(&raw))
    }
}

/// Convenience wrapper around the shared extractor.
pub fn compute_mel(samples: &[f32]) -> Result<Vec<f32>> {
    MelExtractor::global().compute(samples)
}

fn check_window(samples: &[f32]) -> Result<()> {
    if samples.len() != SEGMENT_SAMPLES {
        return Err(Error::SampleCount {
            required: SEGMENT_SAMPLES,
            actual: samples.len(),
        });
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("mel input window"));
    }
    Ok(())
}

fn reflect_pad(samples: &[f32], pad: usize) -> Vec<f64> {
    let n = samples.len() as isize;
    (0..samples.len() + 2 * pad)
        .map(|i| {
            let mut idx = i as isize - pad as isize;
            if idx < 0 {
                idx = -idx;
            }
            if idx >= n {
                idx = 2 * (n - 1) - idx;
            }
            samples[idx as usize] as f64
        })
        .collect()
}

/// Zero mean, unit population std; constant input maps to all zeros.
fn standardize(raw: &[f64]) -> Vec<f32> {
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let var = raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std <= 1e-12 * mean.abs().max(1.0) {
        return vec![0.0; raw.len()];
    }
    raw.iter().map(|v| ((v - mean) / std) as f32).collect()
}

fn slaney_filterbank() -> Vec<MelFilter> {
    let mel_max = hz_to_mel(F_MAX);
    let hz_points: Vec<f64> = (0..N_MELS + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (N_MELS + 1) as f64))
        .collect();
    let bin_hz = SAMPLE_RATE as f64 / FFT_SIZE as f64;
    (0..N_MELS)
        .map(|m| {
            let (lo, mid, hi) = (hz_points[m], hz_points[m + 1], hz_points[m + 2]);
            let norm = 2.0 / (hi - lo);
            let weights: Vec<f64> = (0..N_BINS)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    let rise = (f - lo) / (mid - lo);
                    let fall = (hi - f) / (hi - mid);
                    rise.min(fall).max(0.0) * norm
                })
                .collect();
            let start = weights.iter().position(|&w| w > 0.0).unwrap_or(0);
            let end = weights.iter().rposition(|&w| w > 0.0).map_or(start, |e| e + 1);
            MelFilter {
                start,
                weights: weights[start..end].to_vec(),
            }
        })
        .collect()
}
