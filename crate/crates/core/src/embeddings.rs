//! Frozen-encoder embeddings of vocal segments, computed once per encoder and
//! shared by probes and analyses.

use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::audio::{compute_mel, SourceKind, SEGMENT_SAMPLES};
use crate::encoder::{patchify, Encoder};
use crate::error::{Error, Result};
use crate::manifest::{CatalogEntry, StemSource};
use crate::nn::checksum;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub vector: Vec<f32>,
    pub source_kind: SourceKind,
    pub track_id: String,
    pub offset_s: f64,
}

/// Encoder weights that must not change while they are in use.
#[derive(Debug, Clone)]
pub struct FrozenEncoder {
    pub encoder: Encoder,
    params: Vec<f32>,
    checksum: String,
}

impl FrozenEncoder {
    pub fn new(encoder: Encoder, params: Vec<f32>) -> Result<Self> {
        if params.len() != encoder.param_count() {
            return Err(Error::Shape(format!(
                "encoder expects {} parameters, got {}",
                encoder.param_count(),
                params.len()
            )));
        }
        let checksum = checksum(&params);
        Ok(Self {
            encoder,
            params,
            checksum,
        })
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    /// Recomputes the checksum and fails if the weights changed.
    pub fn verify(&self) -> Result<()> {
        if checksum(&self.params) != self.checksum {
            return Err(Error::FrozenViolation);
        }
        Ok(())
    }

    pub fn embed_mels(&self, mels: &[&[f32]]) -> Result<Vec<f32>> {
        let mut patches = Vec::with_capacity(mels.len() * mels.first().map_or(0, |m| m.len()));
        for m in mels {
            patches.extend(patchify(m, self.encoder.config())?);
        }
        self.encoder.embed(&self.params, &patches, mels.len())
    }
}

/// Segment embeddings per track for one source kind, in offset order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    tracks: BTreeMap<String, Vec<(f64, Vec<f32>)>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            tracks: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, track_id: &str, offset_s: f64, vector: Vec<f32>) {
        let segs = self.tracks.entry(track_id.to_string()).or_default();
        segs.push((offset_s, vector));
        segs.sort_by(|a, b| a.0.total_cmp(&b.0));
    }

    /// All segment embeddings of a track (empty when it has none).
    pub fn track(&self, track_id: &str) -> &[(f64, Vec<f32>)] {
        self.tracks.get(track_id).map_or(&[], Vec::as_slice)
    }

    pub fn at(&self, track_id: &str, offset_s: f64) -> Result<&[f32]> {
        self.track(track_id)
            .iter()
            .find(|(o, _)| (o - offset_s).abs() < 1e-6)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::invalid(format!("no embedding for `{track_id}` at {offset_s} s")))
    }

    pub fn contains_track(&self, track_id: &str) -> bool {
        self.tracks.contains_key(track_id)
    }

    pub fn n_segments(&self) -> usize {
        self.tracks.values().map(Vec::len).sum()
    }
}

/// Embeds the given offsets of each track for every requested kind. Tracks
/// with no offsets are recorded with no segments.
pub fn embed_tracks(
    frozen: &FrozenEncoder,
    tracks: &[(&CatalogEntry, Vec<f64>)],
    kinds: &[SourceKind],
    source: &dyn StemSource,
    jobs: usize,
) -> Result<BTreeMap<SourceKind, EmbeddingTable>> {
    let dim = frozen.encoder.embed_dim();
    let tables: Mutex<BTreeMap<SourceKind, EmbeddingTable>> =
        Mutex::new(kinds.iter().map(|&k| (k, EmbeddingTable::new(dim))).collect());
    let first_err: Mutex<Option<Error>> = Mutex::new(None);
    let jobs = jobs.max(1).min(tracks.len().max(1));
    std::thread::scope(|scope| {
        for j in 0..jobs {
            let tables = &tables;
            let first_err = &first_err;
            scope.spawn(move || {
                for (entry, offsets) in tracks.iter().skip(j).step_by(jobs) {
                    let result = (|| -> Result<Vec<(SourceKind, Vec<Vec<f32>>)>> {
                        if offsets.is_empty() {
                            return Ok(kinds.iter().map(|&k| (k, Vec::new())).collect());
                        }
                        let clips = source.load(entry, kinds)?;
                        let mut out = Vec::new();
                        for (&kind, clip) in kinds.iter().zip(&clips) {
                            let mels = offsets
                                .iter()
                                .map(|&o| compute_mel(&clip.window(o, SEGMENT_SAMPLES)))
                                .collect::<Result<Vec<_>>>()?;
                            let refs: Vec<&[f32]> = mels.iter().map(Vec::as_slice).collect();
                            let flat = frozen.embed_mels(&refs)?;
                            out.push((kind, flat.chunks(dim).map(<[f32]>::to_vec).collect()));
                        }
                        Ok(out)
                    })();
                    match result {
                        Ok(per_kind) => {
                            let mut t = tables.lock().expect("poisoned");
                            for (kind, vecs) in per_kind {
                                let table = t.get_mut(&kind).expect("kind requested");
                                table.tracks.entry(entry.track_id.clone()).or_default();
                                for (&o, v) in offsets.iter().zip(vecs) {
                                    table.insert(&entry.track_id, o, v);
                                }
                            }
                        }
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
    Ok(tables.into_inner().expect("poisoned"))
}

/// Cosine similarity; zero vectors compare as 0.
pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let (mut ab, mut aa, mut bb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return 0.0;
    }
    ab / (aa.sqrt() * bb.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;

    #[test]
    fn frozen_checksum_detects_changes() {
        let enc = Encoder::new(EncoderConfig::desk()).unwrap();
        let p: Vec<f32> = enc.init_params(1);
        let mut f = FrozenEncoder::new(enc, p).unwrap();
        f.verify().unwrap();
        f.params[3] += 1.0;
        assert!(matches!(f.verify(), Err(Error::FrozenViolation)));
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine(&[1.0, 2.0], &[1.0, 2.0]) - 1.0).abs() < 1e-12);
        assert!((cosine(&[1.0, 0.0], &[-2.0, 0.0]) + 1.0).abs() < 1e-12);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), 0.0);
    }

    #[test]
    fn table_orders_by_offset() {
        let mut t = EmbeddingTable::new(1);
        t.insert("a", 6.0, vec![2.0]);
        t.insert("a", 0.0, vec![1.0]);
        assert_eq!(t.track("a")[0].1, vec![1.0]);
        assert_eq!(t.at("a", 6.0).unwrap(), &[2.0]);
        assert!(t.track("b").is_empty());
        assert_eq!(t.n_segments(), 2);
    }
}
