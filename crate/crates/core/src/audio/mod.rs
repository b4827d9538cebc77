//! Waveform front-end: clips, log-mel features, vocal activity and
//! segmentation, plus WAVE file I/O.

mod activity;
mod clip;
mod mel;
mod resample;
mod segment;
pub mod wav;

pub use activity::{ActivityProvider, EnergyHeuristic, GroundTruthActivity, VocalActivity, ACTIVITY_WINDOW_S};
pub use clip::{AudioClip, SourceKind, SAMPLE_RATE};
pub use mel::{compute_mel, MelExtractor, MelSegment, FFT_SIZE, HOP_LENGTH, N_FRAMES, N_MELS, SEGMENT_SAMPLES};
pub use resample::resample;
pub use segment::{segment_track, vocal_segment_offsets, SEGMENT_SECONDS};
