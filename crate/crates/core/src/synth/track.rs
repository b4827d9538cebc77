use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dsp::rms;
use super::style::InstrumentalStyle;
use super::timbre::SingerTimbre;
use super::voice::{render_voice, Melody, VoiceEffects};
use crate::audio::{AudioClip, SourceKind, VocalActivity, ACTIVITY_WINDOW_S, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const MIN_TRACK_S: f64 = 24.0;
pub const MAX_TRACK_S: f64 = 120.0;
pub const REVERB_RT60_S: f64 = 0.8;
pub const VOCODER_FLATTEN: f64 = 0.8;

/// Vocal effect profile of a synthetic track.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Genre {
    Dry,
    Reverb,
    Vocoder,
    Electronic,
}

impl Genre {
    pub const ALL: [Genre; 4] = [Genre::Dry, Genre::Reverb, Genre::Vocoder, Genre::Electronic];

    pub fn as_str(self) -> &'static str {
        match self {
            Genre::Dry => "dry",
            Genre::Reverb => "reverb",
            Genre::Vocoder => "vocoder",
            Genre::Electronic => "electronic",
        }
    }

    pub fn effects(self) -> VoiceEffects {
        match self {
            Genre::Dry => VoiceEffects::DRY,
            Genre::Reverb => VoiceEffects {
                reverb_rt60_s: Some(REVERB_RT60_S),
                ..VoiceEffects::DRY
            },
            Genre::Vocoder | Genre::Electronic => VoiceEffects {
                quantize_pitch: true,
                flatten: VOCODER_FLATTEN,
                reverb_rt60_s: None,
            },
        }
    }

    /// Instrumental RMS relative to the vocal RMS in the mixture.
    pub fn instrumental_ratio(self) -> f64 {
        match self {
            Genre::Electronic => 2.0,
            _ => 1.0,
        }
    }
}

impl std::fmt::Display for Genre {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Genre {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Genre::ALL
            .into_iter()
            .find(|g| g.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown genre `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StemSet {
    pub vocal: AudioClip,
    pub instrumental: AudioClip,
    pub mixture: AudioClip,
}

impl StemSet {
    pub fn get(&self, kind: SourceKind) -> &AudioClip {
        match kind {
            SourceKind::Mixture => &self.mixture,
            SourceKind::VocalStem => &self.vocal,
            SourceKind::InstrumentalStem => &self.instrumental,
        }
    }
}

/// A rendered track with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackRecord {
    pub singer_id: String,
    pub genre: Genre,
    pub instrumental_style_id: u32,
    pub stems: StemSet,
    pub vocal_mask: Vec<bool>,
    pub is_clone: bool,
    pub clone_source_singer: Option<String>,
}

impl TrackRecord {
    pub fn duration_s(&self) -> f64 {
        self.stems.mixture.duration_s()
    }

    pub fn activity(&self) -> VocalActivity {
        VocalActivity::from_flags(self.vocal_mask.clone())
    }
}

/// Vocal mask with between 0 and 25 % silent windows.
pub fn vocal_mask(duration_s: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let n = VocalActivity::window_count(duration_s);
    let max_silent = n / 4;
    let n_silent = rng.random_range(0..=max_silent);
    let mut mask = vec![true; n];
    for i in sample(rng, n, n_silent) {
        mask[i] = false;
    }
    mask
}

fn check_duration(duration_s: f64) -> Result<()> {
    if !(MIN_TRACK_S..=MAX_TRACK_S).contains(&duration_s) {
        return Err(Error::invalid(format!(
            "track duration {duration_s} s outside [{MIN_TRACK_S}, {MAX_TRACK_S}]"
        )));
    }
    Ok(())
}

fn mix(
    timbre: &SingerTimbre,
    style: &InstrumentalStyle,
    genre: Genre,
    duration_s: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(StemSet, Vec<bool>)> {
    let mask = vocal_mask(duration_s, rng);
    let melody = Melody::generate(&mask, timbre.f0_range_semitones, rng);
    let vocal = render_voice(timbre, &melody, duration_s, genre.effects(), rng);
    let inst = style.render(duration_s, rng);

    // Vocal RMS is measured on voiced windows only.
    let win = (ACTIVITY_WINDOW_S * SAMPLE_RATE as f64) as usize;
    let voiced: Vec<f32> = mask
        .iter()
        .enumerate()
        .filter(|(_, &v)| v)
        .flat_map(|(i, _)| vocal[i * win..((i + 1) * win).min(vocal.len())].iter().copied())
        .collect();
    let vocal_rms = rms(&voiced).max(1e-12);
    let inst_gain = genre.instrumental_ratio() * vocal_rms / rms(&inst).max(1e-12);
    let inst: Vec<f32> = inst.iter().map(|&v| (v as f64 * inst_gain) as f32).collect();

    let peak = vocal
        .iter()
        .zip(&inst)
        .map(|(&a, &b)| (a + b).abs().max(a.abs()).max(b.abs()))
        .fold(0.0f32, f32::max)
        .max(1e-12);
    let g = 0.9 / peak;
    let vocal: Vec<f32> = vocal.iter().map(|v| v * g).collect();
    let inst: Vec<f32> = inst.iter().map(|v| v * g).collect();
    let mixture: Vec<f32> = vocal.iter().zip(&inst).map(|(a, b)| a + b).collect();
    Ok((
        StemSet {
            vocal: AudioClip::new(vocal, SAMPLE_RATE)?,
            instrumental: AudioClip::new(inst, SAMPLE_RATE)?,
            mixture: AudioClip::new(mixture, SAMPLE_RATE)?,
        },
        mask,
    ))
}

/// Renders one real track of `timbre` over a variation of `style`.
pub fn render_track(
    timbre: &SingerTimbre,
    style: &InstrumentalStyle,
    genre: Genre,
    rng: &mut ChaCha8Rng,
    duration_s: f64,
) -> Result<TrackRecord> {
    check_duration(duration_s)?;
    let style = style.varied(rng);
    let (stems, vocal_mask) = mix(timbre, &style, genre, duration_s, rng)?;
    Ok(TrackRecord {
        singer_id: timbre.singer_id.clone(),
        genre,
        instrumental_style_id: style.family,
        stems,
        vocal_mask,
        is_clone: false,
        clone_source_singer: None,
    })
}

/// Renders a cloned voice of `source` over a foreign instrumental.
pub fn clone_track(
    source: &SingerTimbre,
    foreign_style: &InstrumentalStyle,
    perturbation_level: f64,
    genre: Genre,
    rng: &mut ChaCha8Rng,
    duration_s: f64,
) -> Result<TrackRecord> {
    check_duration(duration_s)?;
    let timbre = cloned_timbre(source, perturbation_level, rng);
    let style = foreign_style.varied(rng);
    let (stems, vocal_mask) = mix(&timbre, &style, genre, duration_s, rng)?;
    Ok(TrackRecord {
        singer_id: source.singer_id.clone(),
        genre,
        instrumental_style_id: style.family,
        stems,
        vocal_mask,
        is_clone: true,
        clone_source_singer: Some(source.singer_id.clone()),
    })
}

/// Timbre actually sung on a clone: the source with cloning artifacts.
pub fn cloned_timbre(source: &SingerTimbre, perturbation_level: f64, rng: &mut ChaCha8Rng) -> SingerTimbre {
    source.perturbed(perturbation_level, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use crate::synth::style::make_style;
    use crate::synth::timbre::make_singer;

    #[test]
    fn mixing_identity_and_fraction() {
        let t = make_singer(1, "s");
        let s = make_style(1, 0);
        for genre in Genre::ALL {
            let rec = render_track(&t, &s, genre, &mut rng_for(9, &[genre.as_str()]), 24.0).unwrap();
            let m = rec.stems.mixture.samples();
            let v = rec.stems.vocal.samples();
            let i = rec.stems.instrumental.samples();
            assert!(m.iter().zip(v).zip(i).all(|((m, v), i)| (m - (v + i)).abs() <= 1e-6));
            assert!(rec.activity().vocal_fraction >= 0.75);
            assert_eq!(rec.vocal_mask.len(), 8);
            assert!(m.iter().all(|x| x.abs() <= 0.9 + 1e-6));
        }
    }

    #[test]
    fn deterministic_render() {
        let t = make_singer(1, "s");
        let s = make_style(1, 0);
        let a = render_track(&t, &s, Genre::Reverb, &mut rng_for(3, &["x"]), 24.0).unwrap();
        let b = render_track(&t, &s, Genre::Reverb, &mut rng_for(3, &["x"]), 24.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn electronic_instrumental_is_louder() {
        let t = make_singer(1, "s");
        let s = make_style(1, 0);
        let rec = render_track(&t, &s, Genre::Electronic, &mut rng_for(3, &["e"]), 24.0).unwrap();
        let win = 48_000;
        let voiced: Vec<f32> = rec
            .vocal_mask
            .iter()
            .enumerate()
            .filter(|(_, &v)| v)
            .flat_map(|(k, _)| rec.stems.vocal.samples()[k * win..(k + 1) * win].to_vec())
            .collect();
        let ratio = rms(rec.stems.instrumental.samples()) / rms(&voiced);
        assert!((ratio - 2.0).abs() < 1e-3, "ratio {ratio}");
    }

    #[test]
    fn invalid_duration_rejected() {
        let t = make_singer(1, "s");
        let s = make_style(1, 0);
        assert!(render_track(&t, &s, Genre::Dry, &mut rng_for(1, &[]), 12.0).is_err());
        assert!(render_track(&t, &s, Genre::Dry, &mut rng_for(1, &[]), 121.0).is_err());
    }

    #[test]
    fn clone_labels_source() {
        let t = make_singer(1, "src");
        let s = make_style(1, 5);
        let rec = clone_track(&t, &s, 0.1, Genre::Dry, &mut rng_for(1, &["c"]), 24.0).unwrap();
        assert!(rec.is_clone);
        assert_eq!(rec.clone_source_singer.as_deref(), Some("src"));
        assert_eq!(rec.instrumental_style_id, 5);
    }
}
