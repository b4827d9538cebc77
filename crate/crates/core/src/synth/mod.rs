//! Procedural catalog of synthetic singers, their tracks and cloned tracks.

mod catalog;
mod dsp;
mod fidelity;
mod style;
mod timbre;
mod track;
mod voice;

pub use catalog::{
    build_catalog, contrastive_singer_id, entry_for, generate_catalog, home_family, id_singer_id, plan_catalog,
    render_plan, CatalogConfig, SyntheticStemSource, TrackPlan, GENERATOR_VERSION,
};
pub use dsp::rms;
pub use fidelity::clone_fidelity;
pub use style::{make_style, InstrumentalStyle};
pub use timbre::{make_singer, SingerTimbre, FORMANT_RANGES};
pub use track::{clone_track, cloned_timbre, render_track, vocal_mask, Genre, StemSet, TrackRecord};
pub use voice::{render_voice, Melody, Note, VoiceEffects};
