//! Instrumental style families: chord pads of band-limited sawtooths plus
//! filtered-noise percussion. A family fixes register, harmony, brightness,
//! tempo and drum sound; each track draws a small variation of its family.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dsp::{harmonic_sum, rms, BandPass, MAX_PARTIAL_HZ, SR};
use crate::rng::rng_for;

const QUALITIES: [&[f64]; 4] = [&[0.0, 4.0, 7.0], &[0.0, 3.0, 7.0], &[0.0, 5.0, 7.0], &[0.0, 4.0, 7.0, 10.0]];
const DEGREES: [f64; 8] = [0.0, 2.0, 3.0, 5.0, 7.0, 8.0, 9.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentalStyle {
    pub family: u32,
    pub root_midi: f64,
    /// (degree offset in semitones, quality index) per chord; each chord lasts two bars.
    pub progression: Vec<(f64, usize)>,
    pub pad_cutoff_hz: f64,
    pub tempo_bpm: f64,
    pub perc_center_hz: f64,
    pub perc_q: f64,
    pub perc_decay_s: f64,
    /// 16 sixteenth-note steps per bar.
    pub perc_pattern: u16,
    pub perc_level: f64,
}

/// Canonical style of a family.
pub fn make_style(master_seed: u64, family: u32) -> InstrumentalStyle {
    let mut rng = rng_for(master_seed, &["style", &family.to_string()]);
    let root_midi = rng.random_range(36.0..=58.0f64).round();
    let progression = (0..4)
        .map(|_| {
            (
                DEGREES[rng.random_range(0..DEGREES.len())],
                rng.random_range(0..QUALITIES.len()),
            )
        })
        .collect();
    let pad_cutoff_hz = rng.random_range(600f64.ln()..=5000f64.ln()).exp();
    let tempo_bpm = rng.random_range(70.0..=150.0);
    let perc_center_hz = rng.random_range(250f64.ln()..=6000f64.ln()).exp();
    let perc_q = rng.random_range(0.7..=4.0);
    let perc_decay_s = rng.random_range(0.03..=0.25);
    let mut perc_pattern: u16 = rng.random();
    while perc_pattern.count_ones() < 3 {
        perc_pattern |= 1 << rng.random_range(0..16);
    }
    let perc_level = rng.random_range(0.3..=1.0);
    InstrumentalStyle {
        family,
        root_midi,
        progression,
        pad_cutoff_hz,
        tempo_bpm,
        perc_center_hz,
        perc_q,
        perc_decay_s,
        perc_pattern,
        perc_level,
    }
}

impl InstrumentalStyle {
    /// Per-track variation: transposition of up to two semitones and ±6 % tempo.
    pub fn varied<R: Rng>(&self, rng: &mut R) -> InstrumentalStyle {
        let mut out = self.clone();
        out.root_midi += rng.random_range(-2..=2) as f64;
        out.tempo_bpm *= rng.random_range(0.94..=1.06);
        out
    }

    /// Renders `duration_s` seconds of accompaniment, normalized to unit RMS.
    pub fn render<R: Rng>(&self, duration_s: f64, rng: &mut R) -> Vec<f32> {
        let n = (duration_s * SR).round() as usize;
        let beat_s = 60.0 / self.tempo_bpm;
        let bar_s = 4.0 * beat_s;
        let chord_s = 2.0 * bar_s;
        let mut pad = vec![0.0f64; n];

        // Chord pad.
        let n_chords = (duration_s / chord_s).ceil() as usize;
        for c in 0..n_chords {
            let (degree, quality) = self.progression[c % self.progression.len()];
            let start = (c as f64 * chord_s * SR) as usize;
            let end = (((c + 1) as f64 * chord_s * SR) as usize).min(n);
            for &interval in QUALITIES[quality] {
                let midi = self.root_midi + degree + interval;
                let f = 440.0 * 2f64.powf((midi - 69.0) / 12.0);
                let limit = (3.0 * self.pad_cutoff_hz).min(MAX_PARTIAL_HZ);
                let n_harm = ((limit / f).floor() as usize).max(1);
                let amps: Vec<f64> = (1..=n_harm)
                    .map(|k| {
                        let fk = k as f64 * f;
                        (1.0 / k as f64) / (1.0 + (fk / self.pad_cutoff_hz).powi(4)).sqrt()
                    })
                    .collect();
                let mut phase = rng.random_range(0.0..std::f64::consts::TAU);
                let dphi = std::f64::consts::TAU * f / SR;
                let attack = 0.05 * SR;
                let release = 0.08 * SR;
                for (i, p) in pad[start..end].iter_mut().enumerate() {
                    let from_end = (end - start - i) as f64;
                    let env = (i as f64 / attack).min(1.0).min(from_end / release);
                    *p += env * harmonic_sum(phase, &amps);
                    phase += dphi;
                    if phase > std::f64::consts::TAU {
                        phase -= std::f64::consts::TAU;
                    }
                }
            }
        }
        let pad_rms = (pad.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt().max(1e-12);

        // Percussion: decaying noise bursts on pattern steps, band-passed once.
        let mut excitation = vec![0.0f64; n];
        let step_s = bar_s / 16.0;
        let n_steps = (duration_s / step_s).ceil() as usize;
        let burst_len = (5.0 * self.perc_decay_s * SR) as usize;
        for s in 0..n_steps {
            if self.perc_pattern & (1 << (s % 16)) == 0 {
                continue;
            }
            let start = (s as f64 * step_s * SR) as usize;
            let accent = if s % 4 == 0 { 1.0 } else { 0.6 };
            for i in 0..burst_len.min(n.saturating_sub(start)) {
                let env = (-(i as f64) / (self.perc_decay_s * SR)).exp();
                excitation[start + i] += accent * env * rng.random_range(-1.0..1.0);
            }
        }
        let mut bp = BandPass::new(self.perc_center_hz, self.perc_q);
        let perc: Vec<f64> = excitation.iter().map(|&x| bp.process(x)).collect();
        let perc_rms = (perc.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt().max(1e-12);

        let out: Vec<f32> = pad
            .iter()
            .zip(&perc)
            .map(|(p, q)| (p / pad_rms + self.perc_level * q / perc_rms) as f32)
            .collect();
        let r = rms(&out).max(1e-12);
        out.iter().map(|&v| (v as f64 / r) as f32).collect()
    }
}
