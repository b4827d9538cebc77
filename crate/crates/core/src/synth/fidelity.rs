//! Generation-time sanity check that cloned voices stay recognizable.

use super::timbre::{make_singer, SingerTimbre};
use super::voice::{render_voice, Melody, VoiceEffects};
use crate::audio::{MelExtractor, N_FRAMES, N_MELS, SEGMENT_SAMPLES};
use crate::error::Result;
use crate::rng::rng_for;

const CHECK_S: f64 = 12.0;

fn mean_log_mel(timbre: &SingerTimbre, melody: &Melody, seed: u64) -> Result<Vec<f64>> {
    let x = render_voice(timbre, melody, CHECK_S, VoiceEffects::DRY, &mut rng_for(seed, &["fidelity-voice"]));
    let ex = MelExtractor::global();
    let mut profile = vec![0.0; N_MELS];
    for seg in x.chunks_exact(SEGMENT_SAMPLES) {
        let lm = ex.log_mel(seg)?;
        for (m, p) in profile.iter_mut().enumerate() {
            *p += lm[m * N_FRAMES..(m + 1) * N_FRAMES].iter().sum::<f64>();
        }
    }
    Ok(profile)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Fraction of clones whose mean log-mel profile is closer to their source
/// singer than to any other candidate, all voices singing one shared contour.
pub fn clone_fidelity(
    master_seed: u64,
    sources: &[String],
    candidates: &[String],
    perturbation: f64,
    trials_per_source: usize,
) -> Result<f64> {
    let timbres: Vec<SingerTimbre> = candidates.iter().map(|s| make_singer(master_seed, s)).collect();
    let mut hits = 0usize;
    let mut total = 0usize;
    for src in sources {
        let source = make_singer(master_seed, src);
        for trial in 0..trials_per_source {
            let tag = format!("{src}/{trial}");
            let melody = Melody::generate(&[true; 4], 8.0, &mut rng_for(master_seed, &["fidelity-melody", &tag]));
            let seed = crate::rng::derive_seed(master_seed, &["fidelity", &tag]);
            let clone = source.perturbed(perturbation, &mut rng_for(master_seed, &["fidelity-clone", &tag]));
            let probe = mean_log_mel(&clone, &melody, seed)?;
            let mut best: Option<(f64, &str)> = None;
            for t in timbres.iter().chain(std::iter::once(&source)) {
                let d = distance(&probe, &mean_log_mel(t, &melody, seed)?);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, t.singer_id.as_str()));
                }
            }
            hits += usize::from(best.map(|b| b.1) == Some(src.as_str()));
            total += 1;
        }
    }
    Ok(if total == 0 { 1.0 } else { hits as f64 / total as f64 })
}
