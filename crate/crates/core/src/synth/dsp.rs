//! Small synthesis helpers shared by the voice and instrumental renderers.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

pub const SR: f64 = 16_000.0;
pub const MAX_PARTIAL_HZ: f64 = 7600.0;

/// RBJ band-pass biquad (0 dB peak gain).
#[derive(Debug, Clone)]
pub struct BandPass {
    b0: f64,
    b2: f64,
    a1: f64,
    a2: f64,
    x1: f64,
    x2: f64,
    y1: f64,
    y2: f64,
}

impl BandPass {
    pub fn new(center_hz: f64, q: f64) -> Self {
        let w0 = 2.0 * std::f64::consts::PI * center_hz / SR;
        let alpha = w0.sin() / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b0: alpha / a0,
            b2: -alpha / a0,
            a1: -2.0 * w0.cos() / a0,
            a2: (1.0 - alpha) / a0,
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    pub fn process(&mut self, x: f64) -> f64 {
        let y = self.b0 * x + self.b2 * self.x2 - self.a1 * self.y1 - self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Adds `Σ amps[k-1] sin(k·phase)` using the Chebyshev recurrence.
#[inline]
pub fn harmonic_sum(phase: f64, amps: &[f64]) -> f64 {
    if amps.is_empty() {
        return 0.0;
    }
    let s1 = phase.sin();
    let two_c = 2.0 * phase.cos();
    let mut prev = 0.0;
    let mut cur = s1;
    let mut acc = amps[0] * s1;
    for &a in &amps[1..] {
        let next = two_c * cur - prev;
        prev = cur;
        cur = next;
        acc += a * next;
    }
    acc
}

pub fn rms(x: &[f32]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Linear convolution truncated to the length of `signal`, via FFT.
pub fn convolve_same(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    let n = (signal.len() + kernel.len()).next_power_of_two();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut a: Vec<Complex<f64>> = signal.iter().map(|&v| Complex::new(v, 0.0)).collect();
    a.resize(n, Complex::new(0.0, 0.0));
    let mut b: Vec<Complex<f64>> = kernel.iter().map(|&v| Complex::new(v, 0.0)).collect();
    b.resize(n, Complex::new(0.0, 0.0));
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    inv.process(&mut a);
    a[..signal.len()].iter().map(|c| c.re / n as f64).collect()
}
