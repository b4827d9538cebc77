//! Per-3 s vocal activity flags.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::clip::{AudioClip, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const ACTIVITY_WINDOW_S: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocalActivity {
    pub window_s: f64,
    pub flags: Vec<bool>,
    pub vocal_fraction: f64,
}

impl VocalActivity {
    pub fn from_flags(flags: Vec<bool>) -> Self {
        let vocal_fraction = if flags.is_empty() {
            0.0
        } else {
            flags.iter().filter(|&&f| f).count() as f64 / flags.len() as f64
        };
        Self {
            window_s: ACTIVITY_WINDOW_S,
            flags,
            vocal_fraction,
        }
    }

    /// Number of full activity windows in a clip of `duration_s`.
    pub fn window_count(duration_s: f64) -> usize {
        (duration_s / ACTIVITY_WINDOW_S + 1e-9).floor() as usize
    }

    /// Measures `clip` with `provider`.
    pub fn measure(clip: &AudioClip, provider: &dyn ActivityProvider) -> Result<Self> {
        if clip.duration_s() + 1e-9 < ACTIVITY_WINDOW_S {
            return Err(Error::ClipTooShort {
                required_s: ACTIVITY_WINDOW_S,
                actual_s: clip.duration_s(),
            });
        }
        let flags = provider.flags(clip)?;
        let expected = Self::window_count(clip.duration_s());
        if flags.len() != expected {
            return Err(Error::Shape(format!(
                "activity provider returned {} flags for {} windows",
                flags.len(),
                expected
            )));
        }
        Ok(Self::from_flags(flags))
    }
}

/// Source of per-window vocal flags.
pub trait ActivityProvider {
    fn flags(&self, clip: &AudioClip) -> Result<Vec<bool>>;
}

/// Known mask, e.g. from the synthetic generator.
#[derive(Debug, Clone)]
pub struct GroundTruthActivity<'a> {
    pub mask: &'a [bool],
}

impl ActivityProvider for GroundTruthActivity<'_> {
    fn flags(&self, clip: &AudioClip) -> Result<Vec<bool>> {
        let n = VocalActivity::window_count(clip.duration_s());
        if self.mask.len() < n {
            return Err(Error::Shape(format!(
                "ground-truth mask has {} windows, clip needs {}",
                self.mask.len(),
                n
            )));
        }
        Ok(self.mask[..n].to_vec())
    }
}

/// Energy heuristic for audio without a known mask.
///
/// Each STFT frame's magnitude spectrum has the track's per-bin median
/// (the sustained, mostly harmonic accompaniment) removed; the positive
/// residual inside the band is summed per window, and a window is vocal when
/// its residual energy exceeds `factor` times the median window energy.
#[derive(Debug, Clone)]
pub struct EnergyHeuristic {
    pub low_hz: f64,
    pub high_hz: f64,
    pub factor: f64,
}

impl Default for EnergyHeuristic {
    fn default() -> Self {
        Self {
            low_hz: 200.0,
            high_hz: 4000.0,
            factor: 1.5,
        }
    }
}

impl ActivityProvider for EnergyHeuristic {
    fn flags(&self, clip: &AudioClip) -> Result<Vec<bool>> {
        const N: usize = 1024;
        const HOP: usize = 512;
        let n_windows = VocalActivity::window_count(clip.duration_s());
        let samples = clip.samples();
        let win_len = (ACTIVITY_WINDOW_S * SAMPLE_RATE as f64) as usize;
        let bin_hz = SAMPLE_RATE as f64 / N as f64;
        let lo = (self.low_hz / bin_hz).ceil() as usize;
        let hi = ((self.high_hz / bin_hz).floor() as usize).min(N / 2);
        let fft = FftPlanner::<f64>::new().plan_fft_forward(N);
        let hann: Vec<f64> = (0..N)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / N as f64).cos())
            .collect();

        let usable = n_windows * win_len;
        let n_frames = if usable >= N { (usable - N) / HOP + 1 } else { 0 };
        let mut spectra: Vec<Vec<f64>> = Vec::with_capacity(n_frames);
        let mut buf = vec![Complex::new(0.0, 0.0); N];
        for f in 0..n_frames {
            let frame = &samples[f * HOP..f * HOP + N];
            for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&hann) {
                *b = Complex::new(x as f64 * w, 0.0);
            }
            fft.process(&mut buf);
            spectra.push(buf[lo..=hi].iter().map(|c| c.norm()).collect());
        }

        let width = hi + 1 - lo;
        let mut medians = vec![0.0; width];
        for (k, m) in medians.iter_mut().enumerate() {
            let mut col: Vec<f64> = spectra.iter().map(|s| s[k]).collect();
            *m = median(&mut col);
        }

        let mut energies = vec![0.0; n_windows];
        for (f, spec) in spectra.iter().enumerate() {
            let start = f * HOP;
            let w = start / win_len;
            if start + N > (w + 1) * win_len {
                continue;
            }
            energies[w] += spec
                .iter()
                .zip(&medians)
                .map(|(s, m)| (s - m).max(0.0).powi(2))
                .sum::<f64>();
        }
        let threshold = median(&mut energies.clone()) * self.factor;
        Ok(energies.iter().map(|&e| e > threshold && e > 0.0).collect())
    }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
