use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;

/// Which signal of a track a feature was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    Mixture,
    VocalStem,
    InstrumentalStem,
}

impl SourceKind {
    pub const ALL: [SourceKind; 3] = [
        SourceKind::Mixture,
        SourceKind::VocalStem,
        SourceKind::InstrumentalStem,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Mixture => "mixture",
            SourceKind::VocalStem => "vocal_stem",
            SourceKind::InstrumentalStem => "instrumental_stem",
        }
    }

    /// Short tag used in stem file names.
    pub fn file_tag(self) -> &'static str {
        match self {
            SourceKind::Mixture => "mix",
            SourceKind::VocalStem => "vocal",
            SourceKind::InstrumentalStem => "inst",
        }
    }
}

impl std::fmt::Display for SourceKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Mono waveform at 16 kHz.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::SampleRate(sample_rate));
        }
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite("audio samples"));
        }
        Ok(Self { samples })
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }

    /// Samples of the window `[offset_s, offset_s + len)`, zero-padded past the end.
    pub fn window(&self, offset_s: f64, len: usize) -> Vec<f32> {
        let start = (offset_s * SAMPLE_RATE as f64).round() as usize;
        let mut out = vec![0.0; len];
        if start < self.samples.len() {
            let end = (start + len).min(self.samples.len());
            out[..end - start].copy_from_slice(&self.samples[start..end]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_wrong_rate_and_nan() {
        assert!(matches!(AudioClip::new(vec![0.0], 44_100), Err(Error::SampleRate(44_100))));
        assert!(matches!(AudioClip::new(vec![f32::NAN], 16_000), Err(Error::NonFinite(_))));
    }

    #[test]
    fn window_pads_past_end() {
        let clip = AudioClip::new(vec![1.0; 10], 16_000).unwrap();
        let w = clip.window(0.0, 12);
        assert_eq!(&w[8..], &[1.0, 1.0, 0.0, 0.0]);
    }
}
