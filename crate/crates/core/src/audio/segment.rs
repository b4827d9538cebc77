use super::activity::{VocalActivity, ACTIVITY_WINDOW_S};
use super::clip::AudioClip;

pub const SEGMENT_SECONDS: f64 = 6.0;

/// Offsets (multiples of `hop_s`) of 6 s windows whose overlap with
/// vocal-flagged 3 s windows covers at least half the window.
pub fn vocal_segment_offsets(duration_s: f64, activity: &VocalActivity, hop_s: f64) -> Vec<f64> {
    assert!(hop_s > 0.0, "hop must be positive");
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let start = k as f64 * hop_s;
        let end = start + SEGMENT_SECONDS;
        if end > duration_s + 1e-9 {
            break;
        }
        let covered: f64 = activity
            .flags
            .iter()
            .enumerate()
            .filter(|(_, &f)| f)
            .map(|(i, _)| {
                let w0 = i as f64 * ACTIVITY_WINDOW_S;
                let w1 = w0 + ACTIVITY_WINDOW_S;
                (end.min(w1) - start.max(w0)).max(0.0)
            })
            .sum();
        if covered + 1e-9 >= 0.5 * SEGMENT_SECONDS {
            out.push(start);
        }
        k += 1;
    }
    out
}

/// Vocal segment offsets of a clip; empty when nothing qualifies.
pub fn segment_track(clip: &AudioClip, activity: &VocalActivity, hop_s: f64) -> Vec<f64> {
    vocal_segment_offsets(clip.duration_s(), activity, hop_s)
}
