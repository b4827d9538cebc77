//! Catalog planning, rendering and on-disk assembly.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::style::make_style;
use super::timbre::make_singer;
use super::track::{clone_track, render_track, Genre, TrackRecord, MAX_TRACK_S, MIN_TRACK_S};
use crate::audio::{wav, AudioClip, SourceKind};
use crate::error::{Error, Result};
use crate::manifest::{
    write_atomic, CatalogEntry, CatalogManifest, ManifestHeader, Pool, RenderRecipe, StemSource,
    MANIFEST_SCHEMA_VERSION,
};
use crate::rng::{derive_seed, rng_for};

pub const GENERATOR_VERSION: &str = concat!("singerlab-synth/", env!("CARGO_PKG_VERSION"));
pub const CATALOG_SCHEMA_VERSION: u32 = 1;

/// Role counts for a synthetic catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CatalogConfig {
    #[serde(default = "one")]
    pub schema_version: u32,
    pub n_contrastive_singers: usize,
    pub contrastive_tracks_per_singer: usize,
    pub n_id_singers: usize,
    /// Inclusive range of real tracks per identification singer.
    pub id_tracks_per_singer: (usize, usize),
    pub n_clone_sources: usize,
    pub clones_per_source: usize,
    #[serde(default = "default_perturbation")]
    pub clone_perturbation: f64,
    #[serde(default = "default_families")]
    pub n_style_families: u32,
    #[serde(default = "default_duration")]
    pub track_duration_s: (f64, f64),
    /// Relative weights for dry, reverb, vocoder, electronic.
    #[serde(default = "default_genre_weights")]
    pub genre_weights: [f64; 4],
}

fn one() -> u32 {
    1
}
fn default_perturbation() -> f64 {
    0.1
}
fn default_families() -> u32 {
    12
}
fn default_duration() -> (f64, f64) {
    (24.0, 30.0)
}
fn default_genre_weights() -> [f64; 4] {
    [1.0; 4]
}

impl Default for CatalogConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl CatalogConfig {
    /// 64 contrastive singers × 3 tracks, 24 identification singers × 8 tracks,
    /// 8 clone sources × 4 clones.
    pub fn desk() -> Self {
        Self {
            schema_version: CATALOG_SCHEMA_VERSION,
            n_contrastive_singers: 64,
            contrastive_tracks_per_singer: 3,
            n_id_singers: 24,
            id_tracks_per_singer: (8, 8),
            n_clone_sources: 8,
            clones_per_source: 4,
            clone_perturbation: default_perturbation(),
            n_style_families: default_families(),
            track_duration_s: default_duration(),
            genre_weights: default_genre_weights(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Infeasible(m));
        if self.schema_version != CATALOG_SCHEMA_VERSION {
            return bad(format!("unsupported catalog schema version {}", self.schema_version));
        }
        if self.n_contrastive_singers > 0 && self.contrastive_tracks_per_singer < 2 {
            return bad("contrastive singers need at least 2 tracks".into());
        }
        if self.id_tracks_per_singer.0 < 7 || self.id_tracks_per_singer.0 > self.id_tracks_per_singer.1 {
            return bad("identification singers need a track range starting at 7 or more".into());
        }
        if self.n_clone_sources > self.n_id_singers {
            return bad(format!(
                "{} clone sources exceed {} identification singers",
                self.n_clone_sources, self.n_id_singers
            ));
        }
        if self.n_clone_sources > 0 && self.clones_per_source == 0 {
            return bad("clones_per_source must be positive".into());
        }
        if self.n_style_families < 2 {
            return bad("at least two style families are needed for foreign clone styles".into());
        }
        let (lo, hi) = self.track_duration_s;
        if !(MIN_TRACK_S..=MAX_TRACK_S).contains(&lo) || !(MIN_TRACK_S..=MAX_TRACK_S).contains(&hi) || lo > hi {
            return bad(format!("track durations must lie in [{MIN_TRACK_S}, {MAX_TRACK_S}] s"));
        }
        if !(0.0..=1.0).contains(&self.clone_perturbation) {
            return bad("clone_perturbation must lie in [0, 1]".into());
        }
        if self.genre_weights.iter().any(|w| *w < 0.0) || self.genre_weights.iter().sum::<f64>() <= 0.0 {
            return bad("genre weights must be non-negative with a positive sum".into());
        }
        Ok(())
    }

    pub fn expected_tracks(&self) -> (usize, usize, usize) {
        (
            self.n_contrastive_singers * self.contrastive_tracks_per_singer,
            self.n_id_singers * self.id_tracks_per_singer.0,
            self.n_clone_sources * self.clones_per_source,
        )
    }
}

/// Everything needed to render one track; the vocal mask is decided at render time.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackPlan {
    pub track_id: String,
    pub singer_id: String,
    pub pool: Pool,
    pub genre: Genre,
    pub duration_s: f64,
    pub recipe: RenderRecipe,
    pub clone_source: Option<String>,
}

fn pick_genre(weights: &[f64; 4], rng: &mut ChaCha8Rng) -> Genre {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random_range(0.0..total);
    for (g, w) in Genre::ALL.iter().zip(weights) {
        if x < *w {
            return *g;
        }
        x -= w;
    }
    Genre::Dry
}

fn pick_duration(range: (f64, f64), rng: &mut ChaCha8Rng) -> f64 {
    // Whole numbers of 3 s activity windows.
    let lo = (range.0 / 3.0).ceil() as u32;
    let hi = (range.1 / 3.0).floor() as u32;
    3.0 * rng.random_range(lo..=hi.max(lo)) as f64
}

pub fn home_family(master_seed: u64, singer_id: &str, n_families: u32) -> u32 {
    rng_for(master_seed, &["home-family", singer_id]).random_range(0..n_families)
}

pub fn contrastive_singer_id(i: usize) -> String {
    format!("c{i:04}")
}

pub fn id_singer_id(i: usize) -> String {
    format!("s{i:04}")
}

/// Lays out every track of the catalog without rendering audio.
pub fn plan_catalog(config: &CatalogConfig, master_seed: u64) -> Result<Vec<TrackPlan>> {
    config.validate()?;
    let mut plans = Vec::new();
    let real = |singer: String, pool: Pool, n_tracks: usize, plans: &mut Vec<TrackPlan>| {
        let family = home_family(master_seed, &singer, config.n_style_families);
        for k in 0..n_tracks {
            let track_id = format!("{singer}_t{k:02}");
            let mut rng = rng_for(master_seed, &["plan", &track_id]);
            plans.push(TrackPlan {
                genre: pick_genre(&config.genre_weights, &mut rng),
                duration_s: pick_duration(config.track_duration_s, &mut rng),
                recipe: RenderRecipe {
                    seed: derive_seed(master_seed, &["render", &track_id]),
                    style_family: family,
                    perturbation: 0.0,
                },
                track_id,
                singer_id: singer.clone(),
                pool,
                clone_source: None,
            });
        }
    };
    for i in 0..config.n_contrastive_singers {
        real(contrastive_singer_id(i), Pool::Contrastive, config.contrastive_tracks_per_singer, &mut plans);
    }
    let id_singers: Vec<String> = (0..config.n_id_singers).map(id_singer_id).collect();
    for s in &id_singers {
        let (lo, hi) = config.id_tracks_per_singer;
        let n = rng_for(master_seed, &["n-tracks", s]).random_range(lo..=hi);
        real(s.clone(), Pool::Identification, n, &mut plans);
    }

    let mut sources = id_singers.clone();
    sources.shuffle(&mut rng_for(master_seed, &["clone-sources"]));
    sources.truncate(config.n_clone_sources);
    sources.sort();
    for src in &sources {
        let home = home_family(master_seed, src, config.n_style_families);
        let foreign: Vec<u32> = (0..config.n_style_families).filter(|&f| f != home).collect();
        for k in 0..config.clones_per_source {
            let track_id = format!("{src}_x{k:02}");
            let mut rng = rng_for(master_seed, &["plan", &track_id]);
            let family = foreign[rng.random_range(0..foreign.len())];
            plans.push(TrackPlan {
                genre: pick_genre(&config.genre_weights, &mut rng),
                duration_s: pick_duration(config.track_duration_s, &mut rng),
                recipe: RenderRecipe {
                    seed: derive_seed(master_seed, &["render", &track_id]),
                    style_family: family,
                    perturbation: config.clone_perturbation,
                },
                track_id,
                singer_id: src.clone(),
                pool: Pool::Clone,
                clone_source: Some(src.clone()),
            });
        }
    }
    Ok(plans)
}

pub fn render_plan(master_seed: u64, plan: &TrackPlan) -> Result<TrackRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(plan.recipe.seed);
    let style = make_style(master_seed, plan.recipe.style_family);
    match &plan.clone_source {
        None => {
            let timbre = make_singer(master_seed, &plan.singer_id);
            render_track(&timbre, &style, plan.genre, &mut rng, plan.duration_s)
        }
        Some(src) => {
            let timbre = make_singer(master_seed, src);
            clone_track(&timbre, &style, plan.recipe.perturbation, plan.genre, &mut rng, plan.duration_s)
        }
    }
}

fn stem_paths(track_id: &str) -> BTreeMap<SourceKind, String> {
    SourceKind::ALL
        .iter()
        .map(|k| (*k, format!("audio/{track_id}.{}.wav", k.file_tag())))
        .collect()
}

pub fn entry_for(plan: &TrackPlan, record: &TrackRecord) -> CatalogEntry {
    let activity = record.activity();
    CatalogEntry {
        track_id: plan.track_id.clone(),
        singer_id: plan.singer_id.clone(),
        genre: plan.genre.as_str().to_string(),
        instrumental_style_id: Some(record.instrumental_style_id),
        duration_s: record.duration_s(),
        vocal_mask: record.vocal_mask.clone(),
        vocal_fraction: activity.vocal_fraction,
        is_clone: record.is_clone,
        clone_source_singer: record.clone_source_singer.clone(),
        pool: Some(plan.pool),
        stems: stem_paths(&plan.track_id),
        render: Some(plan.recipe.clone()),
    }
}

/// Renders every planned track (striped over `jobs` threads) and hands each
/// to `sink`. The manifest order and contents do not depend on `jobs`.
pub fn generate_catalog<F>(config: &CatalogConfig, master_seed: u64, jobs: usize, sink: F) -> Result<CatalogManifest>
where
    F: Fn(&CatalogEntry, &TrackRecord) -> Result<()> + Sync,
{
    let plans = plan_catalog(config, master_seed)?;
    let slots: Mutex<Vec<Option<CatalogEntry>>> = Mutex::new(vec![None; plans.len()]);
    let first_error: Mutex<Option<Error>> = Mutex::new(None);
    let jobs = jobs.max(1);
    std::thread::scope(|scope| {
        for w in 0..jobs {
            let (plans, slots, first_error, sink) = (&plans, &slots, &first_error, &sink);
            scope.spawn(move || {
                for (i, plan) in plans.iter().enumerate().skip(w).step_by(jobs) {
                    if first_error.lock().expect("poisoned").is_some() {
                        return;
                    }
                    let result = render_plan(master_seed, plan).and_then(|rec| {
                        let entry = entry_for(plan, &rec);
                        sink(&entry, &rec)?;
                        Ok(entry)
                    });
                    match result {
                        Ok(entry) => slots.lock().expect("poisoned")[i] = Some(entry),
                        Err(e) => {
                            first_error.lock().expect("poisoned").get_or_insert(e);
                            return;
                        }
                    }
                }
            });
        }
    });
    if let Some(e) = first_error.into_inner().expect("poisoned") {
        return Err(e);
    }
    let entries = slots
        .into_inner()
        .expect("poisoned")
        .into_iter()
        .map(|e| e.expect("every plan rendered"))
        .collect();
    let manifest = CatalogManifest {
        header: ManifestHeader {
            schema_version: MANIFEST_SCHEMA_VERSION,
            master_seed: Some(master_seed),
            generator_version: GENERATOR_VERSION.to_string(),
        },
        entries,
    };
    manifest.validate()?;
    Ok(manifest)
}

/// Renders the catalog to `out_dir`: 16-bit WAVE stems under `audio/` and
/// `manifest.jsonl`.
pub fn build_catalog(config: &CatalogConfig, master_seed: u64, out_dir: &Path, jobs: usize) -> Result<CatalogManifest> {
    let audio = out_dir.join("audio");
    std::fs::create_dir_all(&audio).map_err(|e| Error::io(&audio, e))?;
    let manifest = generate_catalog(config, master_seed, jobs, |entry, rec| {
        for (kind, rel) in &entry.stems {
            let bytes = wav::encode_pcm16(rec.stems.get(*kind).samples(), crate::audio::SAMPLE_RATE);
            write_atomic(&out_dir.join(rel), &bytes)?;
        }
        Ok(())
    })?;
    manifest.write(&out_dir.join("manifest.jsonl"))?;
    Ok(manifest)
}

/// Re-renders synthetic stems from their recipes instead of reading files.
#[derive(Debug, Clone)]
pub struct SyntheticStemSource {
    pub master_seed: u64,
}

impl SyntheticStemSource {
    pub fn plan_of(entry: &CatalogEntry) -> Result<TrackPlan> {
        let recipe = entry
            .render
            .clone()
            .ok_or_else(|| Error::invalid(format!("track `{}` has no render recipe", entry.track_id)))?;
        Ok(TrackPlan {
            track_id: entry.track_id.clone(),
            singer_id: entry.singer_id.clone(),
            pool: entry.pool.unwrap_or(Pool::Identification),
            genre: entry.genre.parse()?,
            duration_s: entry.duration_s,
            recipe,
            clone_source: entry.clone_source_singer.clone(),
        })
    }
}

impl StemSource for SyntheticStemSource {
    fn load(&self, entry: &CatalogEntry, kinds: &[SourceKind]) -> Result<Vec<AudioClip>> {
        let rec = render_plan(self.master_seed, &Self::plan_of(entry)?)?;
        Ok(kinds.iter().map(|k| rec.stems.get(*k).clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_plan_counts() {
        let plans = plan_catalog(&CatalogConfig::desk(), 7).unwrap();
        let count = |p: Pool| plans.iter().filter(|t| t.pool == p).count();
        assert_eq!(count(Pool::Contrastive), 192);
        assert_eq!(count(Pool::Identification), 192);
        assert_eq!(count(Pool::Clone), 32);
    }

    #[test]
    fn clones_use_foreign_families() {
        let cfg = CatalogConfig::desk();
        let plans = plan_catalog(&cfg, 7).unwrap();
        for p in plans.iter().filter(|p| p.pool == Pool::Clone) {
            let src = p.clone_source.as_ref().unwrap();
            let home = home_family(7, src, cfg.n_style_families);
            assert_ne!(p.recipe.style_family, home);
            assert!(plans
                .iter()
                .filter(|q| q.singer_id == *src && q.pool == Pool::Identification)
                .all(|q| q.recipe.style_family == home));
        }
    }

    #[test]
    fn infeasible_configs_rejected() {
        let mut cfg = CatalogConfig::desk();
        cfg.n_clone_sources = 30;
        assert!(matches!(plan_catalog(&cfg, 1), Err(Error::Infeasible(_))));
        let mut cfg = CatalogConfig::desk();
        cfg.id_tracks_per_singer = (6, 8);
        assert!(plan_catalog(&cfg, 1).is_err());
        let mut cfg = CatalogConfig::desk();
        cfg.track_duration_s = (12.0, 30.0);
        assert!(plan_catalog(&cfg, 1).is_err());
    }

    #[test]
    fn durations_are_whole_windows() {
        for p in plan_catalog(&CatalogConfig::desk(), 3).unwrap() {
            assert!((24.0..=30.0).contains(&p.duration_s));
            assert_eq!(p.duration_s % 3.0, 0.0);
        }
    }
}
