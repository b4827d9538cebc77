//! In-memory cache of standardized log-mel segments keyed by
//! (track, source kind, offset), filled in parallel from a stem source.

use std::collections::HashMap;
use std::sync::Mutex;

use crate::audio::{compute_mel, SourceKind, SAMPLE_RATE, SEGMENT_SAMPLES};
use crate::error::{Error, Result};
use crate::manifest::{CatalogEntry, StemSource};

/// Anything that can hand out a mel for a segment reference.
pub trait MelSource: Sync {
    fn mel(&self, track_id: &str, kind: SourceKind, offset_s: f64) -> Result<&[f32]>;
}

fn offset_key(offset_s: f64) -> u64 {
    (offset_s * 1000.0).round() as u64
}

/// Mels to compute for one track.
#[derive(Debug, Clone)]
pub struct MelRequest<'a> {
    pub entry: &'a CatalogEntry,
    pub kinds: Vec<SourceKind>,
    pub offsets: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct MelBank {
    mels: HashMap<(String, SourceKind, u64), Vec<f32>>,
}

impl MelBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.mels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mels.is_empty()
    }

    pub fn contains(&self, track_id: &str, kind: SourceKind, offset_s: f64) -> bool {
        self.mels.contains_key(&(track_id.to_string(), kind, offset_key(offset_s)))
    }

    pub fn insert(&mut self, track_id: &str, kind: SourceKind, offset_s: f64, mel: Vec<f32>) {
        self.mels.insert((track_id.to_string(), kind, offset_key(offset_s)), mel);
    }

    /// Loads each requested track once and computes all its mels, spreading
    /// tracks over `jobs` threads. Existing entries are kept.
    pub fn fill(&mut self, requests: &[MelRequest<'_>], source: &dyn StemSource, jobs: usize) -> Result<()> {
        let todo: Vec<&MelRequest<'_>> = requests
            .iter()
            .filter(|r| {
                r.kinds
                    .iter()
                    .any(|&k| r.offsets.iter().any(|&o| !self.contains(&r.entry.track_id, k, o)))
            })
            .collect();
        let jobs = jobs.max(1).min(todo.len().max(1));
        let out: Mutex<Vec<((String, SourceKind, u64), Vec<f32>)>> = Mutex::new(Vec::new());
        let first_err: Mutex<Option<Error>> = Mutex::new(None);
        std::thread::scope(|scope| {
            for j in 0..jobs {
                let todo = &todo;
                let out = &out;
                let first_err = &first_err;
                scope.spawn(move || {
                    for r in todo.iter().skip(j).step_by(jobs) {
                        match compute_request(r, source) {
                            Ok(mels) => out.lock().expect("poisoned").extend(mels),
                            Err(e) => {
                                first_err.lock().expect("poisoned").get_or_insert(e);
                                return;
                            }
                        }
                    }
                });
            }
        });
        if let Some(e) = first_err.into_inner().expect("poisoned") {
            return Err(e);
        }
        self.mels.extend(out.into_inner().expect("poisoned"));
        Ok(())
    }

    pub fn build(requests: &[MelRequest<'_>], source: &dyn StemSource, jobs: usize) -> Result<Self> {
        let mut bank = Self::new();
        bank.fill(requests, source, jobs)?;
        Ok(bank)
    }
}

fn compute_request(r: &MelRequest<'_>, source: &dyn StemSource) -> Result<Vec<((String, SourceKind, u64), Vec<f32>)>> {
    let clips = source.load(r.entry, &r.kinds)?;
    let mut out = Vec::with_capacity(r.kinds.len() * r.offsets.len());
    for (&kind, clip) in r.kinds.iter().zip(&clips) {
        for &off in &r.offsets {
            let window = clip.window(off, SEGMENT_SAMPLES);
            debug_assert_eq!(clip.sample_rate(), SAMPLE_RATE);
            out.push(((r.entry.track_id.clone(), kind, offset_key(off)), compute_mel(&window)?));
        }
    }
    Ok(out)
}

impl MelSource for MelBank {
    fn mel(&self, track_id: &str, kind: SourceKind, offset_s: f64) -> Result<&[f32]> {
        self.mels
            .get(&(track_id.to_string(), kind, offset_key(offset_s)))
            .map(Vec::as_slice)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "no cached mel for `{track_id}` ({kind}) at {offset_s:.3} s"
                ))
            })
    }
}
