//! Additive singing-voice synthesis driven by a melodic F0 walk.

use rand::Rng;

use super::dsp::{convolve_same, harmonic_sum, rms, BandPass, MAX_PARTIAL_HZ, SR};
use super::timbre::SingerTimbre;
use crate::audio::ACTIVITY_WINDOW_S;

const FORMANT_GAINS: [f64; 3] = [6.0, 4.0, 2.5];
const BLOCK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Note {
    pub start_s: f64,
    pub end_s: f64,
    /// Offset from the singer's base pitch.
    pub semitone: f64,
}

/// Note sequence covering exactly the vocal-flagged activity windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Melody {
    pub notes: Vec<Note>,
}

impl Melody {
    pub fn generate<R: Rng>(mask: &[bool], range_semitones: f64, rng: &mut R) -> Self {
        let half = range_semitones / 2.0;
        let mut notes = Vec::new();
        let mut pitch: f64 = 0.0;
        let mut w = 0;
        while w < mask.len() {
            if !mask[w] {
                w += 1;
                continue;
            }
            let span_start = w as f64 * ACTIVITY_WINDOW_S;
            while w < mask.len() && mask[w] {
                w += 1;
            }
            let span_end = w as f64 * ACTIVITY_WINDOW_S;
            let mut t = span_start;
            while t < span_end - 0.1 {
                let dur = rng.random_range(0.25..0.7);
                let gap = rng.random_range(0.0..0.06);
                let end = (t + dur).min(span_end);
                let step = [-2.0, -1.0, 0.0, 1.0, 2.0][rng.random_range(0..5)];
                pitch = (pitch + step).clamp(-half, half).round();
                notes.push(Note {
                    start_s: t,
                    end_s: end,
                    semitone: pitch,
                });
                t = end + gap;
            }
        }
        Self { notes }
    }
}

/// Vocal processing applied at synthesis time or afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoiceEffects {
    /// Snap F0 to the equal-tempered grid, removing glide and vibrato.
    pub quantize_pitch: bool,
    /// Fraction of the harmonic log-amplitude shape removed (0 = none, 1 = flat),
    /// together with a flat gate-like envelope and no breath noise.
    pub flatten: f64,
    /// Reverb time (s) of the exponentially decaying noise kernel, if any.
    pub reverb_rt60_s: Option<f64>,
}

impl VoiceEffects {
    pub const DRY: VoiceEffects = VoiceEffects {
        quantize_pitch: false,
        flatten: 0.0,
        reverb_rt60_s: None,
    };
}

fn harmonic_amps(timbre: &SingerTimbre, f0: f64, flatten: f64, out: &mut Vec<f64>) {
    out.clear();
    let n = ((MAX_PARTIAL_HZ / f0).floor() as usize).max(1);
    let mut energy = 0.0;
    for k in 1..=n {
        let fk = k as f64 * f0;
        let tilt = 10f64.powf(-timbre.harmonic_rolloff * (k as f64).log2() / 20.0);
        let formant: f64 = 1.0
            + timbre
                .formant_centers
                .iter()
                .zip(FORMANT_GAINS)
                .map(|(&fc, g)| {
                    let bw = 100.0 + 0.08 * fc;
                    g * (-0.5 * ((fk - fc) / bw).powi(2)).exp()
                })
                .sum::<f64>();
        let a = (tilt * formant).powf(1.0 - flatten);
        energy += a * a / 2.0;
        out.push(a);
    }
    let norm = energy.sqrt().max(1e-12);
    for a in out.iter_mut() {
        *a /= norm;
    }
}

/// Renders a vocal stem normalized to unit RMS over its voiced samples.
pub fn render_voice<R: Rng>(
    timbre: &SingerTimbre,
    melody: &Melody,
    duration_s: f64,
    effects: VoiceEffects,
    rng: &mut R,
) -> Vec<f32> {
    let n = (duration_s * SR).round() as usize;
    let mut out = vec![0.0f64; n];
    let tau = std::f64::consts::TAU;
    let glide_coef = 1.0 - (-1.0 / (0.03 * SR)).exp();
    let dyn_rate = rng.random_range(0.2..0.5);
    let dyn_phase = rng.random_range(0.0..tau);
    let mut breath = BandPass::new(timbre.formant_centers[1], 0.7);
    let breath_gain = if effects.flatten > 0.0 { 0.0 } else { 1.5 * timbre.breathiness };

    let mut phase = 0.0f64;
    let mut vib_phase = rng.random_range(0.0..tau);
    let mut glided = melody.notes.first().map_or(0.0, |n| n.semitone);
    let mut amps = Vec::new();

    for note in &melody.notes {
        let s0 = (note.start_s * SR) as usize;
        let s1 = ((note.end_s * SR) as usize).min(n);
        let len = s1.saturating_sub(s0) as f64;
        let attack = 0.03 * SR;
        let release = 0.05 * SR;
        let mut i = s0;
        while i < s1 {
            let block_end = (i + BLOCK).min(s1);
            let t = i as f64 / SR;
            let vib_ramp = ((t - note.start_s) / 0.25).clamp(0.0, 1.0);
            let semi = if effects.quantize_pitch {
                note.semitone
            } else {
                glided + timbre.vibrato_depth * vib_ramp * vib_phase.sin()
            };
            let mut f0 = timbre.f0_base * 2f64.powf(semi / 12.0);
            if effects.quantize_pitch {
                let midi = 69.0 + 12.0 * (f0 / 440.0).log2();
                f0 = 440.0 * 2f64.powf((midi.round() - 69.0) / 12.0);
            }
            harmonic_amps(timbre, f0, effects.flatten, &mut amps);
            let dphi = tau * f0 / SR;
            for (j, o) in out[i..block_end].iter_mut().enumerate() {
                let pos = (i + j - s0) as f64;
                let env = if effects.flatten > 0.0 {
                    (pos / 64.0).min(1.0).min((len - pos) / 64.0)
                } else {
                    let dynamics = 1.0 + 0.2 * (tau * dyn_rate * (i + j) as f64 / SR + dyn_phase).sin();
                    (pos / attack).min(1.0).min((len - pos) / release) * dynamics
                };
                let noise = breath.process(rng.random_range(-1.0..1.0));
                *o = env * (harmonic_sum(phase, &amps) + breath_gain * noise);
                phase += dphi;
                if phase > tau {
                    phase -= tau;
                }
            }
            let dt = (block_end - i) as f64;
            vib_phase = (vib_phase + tau * timbre.vibrato_rate * dt / SR) % tau;
            glided += (note.semitone - glided) * (1.0 - (1.0 - glide_coef).powf(dt));
            i = block_end;
        }
    }

    if let Some(rt60) = effects.reverb_rt60_s {
        let len = (1.5 * rt60 * SR) as usize;
        let mut kernel: Vec<f64> = (0..len)
            .map(|i| rng.random_range(-1.0..1.0) * (-6.91 * i as f64 / (rt60 * SR)).exp())
            .collect();
        let e = kernel.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        kernel.iter_mut().for_each(|v| *v /= e);
        let wet = convolve_same(&out, &kernel);
        for (o, w) in out.iter_mut().zip(wet) {
            *o += 0.8 * w;
        }
    }

    let voiced: Vec<f32> = melody
        .notes
        .iter()
        .flat_map(|nt| {
            let s0 = (nt.start_s * SR) as usize;
            let s1 = ((nt.end_s * SR) as usize).min(n);
            out[s0.min(n)..s1].iter().map(|&v| v as f32).collect::<Vec<_>>()
        })
        .collect();
    let scale = 1.0 / rms(&voiced).max(1e-12);
    out.iter().map(|&v| (v * scale) as f32).collect()
}
