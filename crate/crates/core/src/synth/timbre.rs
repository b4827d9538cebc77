use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::rng_for;

pub const F0_BASE_RANGE: (f64, f64) = (110.0, 440.0);
pub const F0_RANGE_SEMITONES: (f64, f64) = (2.0, 12.0);
pub const VIBRATO_RATE_RANGE: (f64, f64) = (4.0, 7.0);
pub const VIBRATO_DEPTH_RANGE: (f64, f64) = (0.1, 0.8);
pub const ROLLOFF_RANGE: (f64, f64) = (3.0, 15.0);
pub const FORMANT_RANGES: [(f64, f64); 3] = [(300.0, 900.0), (900.0, 2500.0), (2200.0, 3500.0)];
pub const BREATHINESS_RANGE: (f64, f64) = (0.0, 0.3);

/// Parametric voice of one synthetic singer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SingerTimbre {
    pub singer_id: String,
    pub f0_base: f64,
    pub f0_range_semitones: f64,
    pub vibrato_rate: f64,
    pub vibrato_depth: f64,
    /// dB per octave.
    pub harmonic_rolloff: f64,
    pub formant_centers: [f64; 3],
    pub breathiness: f64,
}

fn within((lo, hi): (f64, f64), v: f64) -> bool {
    (lo..=hi).contains(&v)
}

impl SingerTimbre {
    pub fn in_range(&self) -> bool {
        within(F0_BASE_RANGE, self.f0_base)
            && within(F0_RANGE_SEMITONES, self.f0_range_semitones)
            && within(VIBRATO_RATE_RANGE, self.vibrato_rate)
            && within(VIBRATO_DEPTH_RANGE, self.vibrato_depth)
            && within(ROLLOFF_RANGE, self.harmonic_rolloff)
            && self
                .formant_centers
                .iter()
                .zip(FORMANT_RANGES)
                .all(|(&f, r)| within(r, f))
            && within(BREATHINESS_RANGE, self.breathiness)
    }

    pub fn parameter_vector(&self) -> [f64; 9] {
        [
            self.f0_base,
            self.f0_range_semitones,
            self.vibrato_rate,
            self.vibrato_depth,
            self.harmonic_rolloff,
            self.formant_centers[0],
            self.formant_centers[1],
            self.formant_centers[2],
            self.breathiness,
        ]
    }

    /// Cloning artifacts: Gaussian noise with std `level × range width` on
    /// rolloff, formants and breathiness, clamped to the valid ranges.
    pub fn perturbed<R: Rng>(&self, level: f64, rng: &mut R) -> SingerTimbre {
        let mut out = self.clone();
        if level <= 0.0 {
            return out;
        }
        let mut jitter = |v: f64, (lo, hi): (f64, f64)| {
            let n = Normal::new(0.0, level * (hi - lo)).expect("finite std");
            (v + n.sample(rng)).clamp(lo, hi)
        };
        out.harmonic_rolloff = jitter(out.harmonic_rolloff, ROLLOFF_RANGE);
        for (f, r) in out.formant_centers.iter_mut().zip(FORMANT_RANGES) {
            *f = jitter(*f, r);
        }
        out.breathiness = jitter(out.breathiness, BREATHINESS_RANGE);
        out
    }
}

/// Deterministic timbre for `(master_seed, singer_id)`.
pub fn make_singer(master_seed: u64, singer_id: &str) -> SingerTimbre {
    let mut rng = rng_for(master_seed, &["singer", singer_id]);
    let mut uni = |(lo, hi): (f64, f64)| rng.random_range(lo..=hi);
    let log_f0 = uni((F0_BASE_RANGE.0.ln(), F0_BASE_RANGE.1.ln()));
    let f0_range_semitones = uni(F0_RANGE_SEMITONES);
    let vibrato_rate = uni(VIBRATO_RATE_RANGE);
    let vibrato_depth = uni(VIBRATO_DEPTH_RANGE);
    let harmonic_rolloff = uni(ROLLOFF_RANGE);
    let formant_centers = [uni(FORMANT_RANGES[0]), uni(FORMANT_RANGES[1]), uni(FORMANT_RANGES[2])];
    let breathiness = uni(BREATHINESS_RANGE);
    SingerTimbre {
        singer_id: singer_id.to_string(),
        f0_base: log_f0.exp().clamp(F0_BASE_RANGE.0, F0_BASE_RANGE.1),
        f0_range_semitones,
        vibrato_rate,
        vibrato_depth,
        harmonic_rolloff,
        formant_centers,
        breathiness,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_distinct() {
        assert_eq!(make_singer(7, "s000"), make_singer(7, "s000"));
        assert_ne!(
            make_singer(7, "s000").parameter_vector(),
            make_singer(7, "s001").parameter_vector()
        );
    }

    #[test]
    fn ranges_hold() {
        for i in 0..200 {
            assert!(make_singer(3, &format!("s{i}")).in_range());
        }
    }

    #[test]
    fn zero_perturbation_is_identity() {
        let t = make_singer(1, "a");
        let mut rng = rng_for(0, &["p"]);
        assert_eq!(t.perturbed(0.0, &mut rng), t);
        let p = t.perturbed(0.5, &mut rng);
        assert!(p.in_range());
        assert_eq!(p.f0_base, t.f0_base);
    }
}
