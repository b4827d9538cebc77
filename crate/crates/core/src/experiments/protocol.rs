//! Evaluation protocols over frozen-encoder embeddings: multi-run
//! class-subset identification, cloned-voice evaluation and the all-pairs
//! cosine reference analysis.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::audio::SourceKind;
use crate::contrastive::Regime;
use crate::embeddings::{cosine, EmbeddingTable, FrozenEncoder};
use crate::error::{Error, Result};
use crate::manifest::CatalogEntry;
use crate::probe::{predict_track, topk_accuracy, train_probe, ProbeConfig, ProbeData, ProbeHead, TrackOutcome};
use crate::rng::rng_for;
use crate::splits::{sample_class_subset, vocal_offsets, Role, SplitSpec, SEGMENT_HOP_S};

pub const COSINE_KEYS: [&str; 5] = ["test/other", "test/val", "test/vocal", "test/instru", "test/test"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Identification,
    Cloned,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenreScore {
    pub top1: f64,
    pub top5: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_seed: u64,
    pub n_classes: usize,
    pub regime: Regime,
    pub protocol: Protocol,
    pub top1: f64,
    pub top5: f64,
    pub n_tracks: usize,
    pub n_unclassifiable: usize,
    pub per_genre: BTreeMap<String, GenreScore>,
    pub per_bucket: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cosine_profile: Option<BTreeMap<String, f64>>,
}

/// Training-track-count bucket of a singer; `None` below five tracks.
pub fn track_bucket(train_tracks: usize) -> Option<&'static str> {
    match train_tracks {
        0..=4 => None,
        5..=9 => Some("5-9"),
        10..=19 => Some("10-19"),
        _ => Some("20+"),
    }
}

pub const BUCKETS: [&str; 3] = ["5-9", "10-19", "20+"];

/// Offsets to embed for every identification and clone track: all vocal
/// segments at the evaluation hop.
pub fn id_embedding_requests<'a>(entries: &'a [CatalogEntry], split: &SplitSpec) -> Vec<(&'a CatalogEntry, Vec<f64>)> {
    entries
        .iter()
        .filter(|e| {
            matches!(
                split.role(&e.track_id),
                Some(Role::IdTrain | Role::IdVal | Role::IdTest | Role::ClonedEval)
            )
        })
        .map(|e| {
            let mut offs = vocal_offsets(e, SEGMENT_HOP_S);
            if let Some(fixed) = split.fixed_val_segments.get(&e.track_id) {
                for &o in fixed {
                    if !offs.iter().any(|x| (x - o).abs() < 1e-6) {
                        offs.push(o);
                    }
                }
                offs.sort_by(f64::total_cmp);
            }
            (e, offs)
        })
        .collect()
}

/// Inputs shared by every run of an experiment on one frozen encoder.
pub struct ExperimentContext<'a> {
    pub entries: &'a [CatalogEntry],
    pub split: &'a SplitSpec,
    pub frozen: &'a FrozenEncoder,
    pub tables: &'a BTreeMap<SourceKind, EmbeddingTable>,
    pub regime: Regime,
    pub probe: ProbeConfig,
}

/// One run's head, metrics and per-track outcomes (with truth labels).
pub struct RunOutput {
    pub result: RunResult,
    pub head: ProbeHead,
    pub outcomes: Vec<(TrackOutcome, String)>,
}

impl<'a> ExperimentContext<'a> {
    fn entry(&self, track: &str) -> Result<&'a CatalogEntry> {
        self.entries
            .iter()
            .find(|e| e.track_id == track)
            .ok_or_else(|| Error::invalid(format!("split names unknown track `{track}`")))
    }

    fn table(&self, kind: SourceKind) -> Result<&'a EmbeddingTable> {
        self.tables
            .get(&kind)
            .ok_or_else(|| Error::invalid(format!("no {kind} embeddings computed")))
    }

    /// Identification singers (those holding a test track), sorted.
    pub fn id_singers(&self) -> Result<Vec<String>> {
        let mut out = BTreeSet::new();
        for t in self.split.tracks(Role::IdTest) {
            out.insert(self.entry(t)?.singer_id.clone());
        }
        Ok(out.into_iter().collect())
    }

    fn tracks_of(&self, role: Role) -> Result<Vec<&'a CatalogEntry>> {
        self.split.tracks(role).into_iter().map(|t| self.entry(t)).collect()
    }

    fn train_counts(&self) -> Result<BTreeMap<String, usize>> {
        let mut out = BTreeMap::new();
        for e in self.tracks_of(Role::IdTrain)? {
            *out.entry(e.singer_id.clone()).or_default() += 1;
        }
        Ok(out)
    }

    /// The run's class set: `n_classes` identification singers, including
    /// every clone source under the cloned protocol.
    pub fn class_subset(&self, protocol: Protocol, n_classes: usize, seed: u64) -> Result<Vec<String>> {
        let singers = self.id_singers()?;
        let must: BTreeSet<String> = match protocol {
            Protocol::Identification => BTreeSet::new(),
            Protocol::Cloned => self
                .tracks_of(Role::ClonedEval)?
                .iter()
                .map(|e| e.label().to_string())
                .collect(),
        };
        sample_class_subset(&singers, n_classes, &must, seed)
    }

    /// Trains the run's probe on real training tracks of its class set.
    pub fn train_head(&self, protocol: Protocol, n_classes: usize, seed: u64) -> Result<ProbeHead> {
        let table = self.table(self.regime.eval_kind())?;
        let classes = self.class_subset(protocol, n_classes, seed)?;
        let index: BTreeMap<&str, usize> = classes.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut train: Vec<Vec<Vec<&[f32]>>> = vec![Vec::new(); classes.len()];
        for e in self.tracks_of(Role::IdTrain)? {
            if let Some(&c) = index.get(e.singer_id.as_str()) {
                train[c].push(table.track(&e.track_id).iter().map(|(_, v)| v.as_slice()).collect());
            }
        }
        let mut val = Vec::new();
        for e in self.tracks_of(Role::IdVal)? {
            if let Some(&c) = index.get(e.singer_id.as_str()) {
                for &o in self.split.fixed_val_segments.get(&e.track_id).into_iter().flatten() {
                    val.push((table.at(&e.track_id, o)?, c));
                }
            }
        }
        let data = ProbeData {
            classes: classes.clone(),
            train,
            val,
        };
        Ok(train_probe(&data, self.frozen, &self.probe, seed)?.head)
    }

    /// Scores a trained head: test tracks of its classes, or every clone
    /// track against its source singer.
    pub fn evaluate(&self, head: &ProbeHead, protocol: Protocol, seed: u64) -> Result<RunOutput> {
        let table = self.table(self.regime.eval_kind())?;
        let n_classes = head.n_classes();
        let index: BTreeMap<&str, usize> = head.classes.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let eval: Vec<&CatalogEntry> = match protocol {
            Protocol::Identification => self
                .tracks_of(Role::IdTest)?
                .into_iter()
                .filter(|e| index.contains_key(e.singer_id.as_str()))
                .collect(),
            Protocol::Cloned => self.tracks_of(Role::ClonedEval)?,
        };
        let counts = self.train_counts()?;
        let mut preds = Vec::new();
        let mut truths = Vec::new();
        let mut outcomes = Vec::new();
        let mut genre_rows: BTreeMap<String, (Vec<crate::probe::TrackPrediction>, Vec<usize>)> = BTreeMap::new();
        let mut bucket_rows: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        let mut unclassifiable = 0;
        for e in eval {
            let truth_singer = e.label();
            let truth = *index
                .get(truth_singer)
                .ok_or_else(|| Error::invalid(format!("`{truth_singer}` missing from the class set")))?;
            let segs: Vec<&[f32]> = table.track(&e.track_id).iter().map(|(_, v)| v.as_slice()).collect();
            let outcome = predict_track(&head, &e.track_id, &segs)?;
            match &outcome {
                TrackOutcome::Classified(p) => {
                    let g = genre_rows.entry(e.genre.clone()).or_default();
                    g.0.push(p.clone());
                    g.1.push(truth);
                    if let Some(b) = track_bucket(counts.get(truth_singer).copied().unwrap_or(0)) {
                        let slot = bucket_rows.entry(b).or_default();
                        slot.0 += usize::from(p.top1 == truth);
                        slot.1 += 1;
                    }
                    preds.push(p.clone());
                    truths.push(truth);
                }
                TrackOutcome::Unclassifiable { .. } => unclassifiable += 1,
            }
            outcomes.push((outcome, truth_singer.to_string()));
        }
        if unclassifiable > 0 {
            log::warn!("{unclassifiable} tracks had no vocal segments and were excluded");
        }
        let mut per_genre = BTreeMap::new();
        for (g, (p, t)) in &genre_rows {
            per_genre.insert(
                g.clone(),
                GenreScore {
                    top1: topk_accuracy(p, t, 1)?,
                    top5: topk_accuracy(p, t, 5)?,
                    n: p.len(),
                },
            );
        }
        let per_bucket = bucket_rows
            .into_iter()
            .map(|(b, (hit, n))| (b.to_string(), hit as f64 / n as f64))
            .collect();
        let result = RunResult {
            run_seed: seed,
            n_classes,
            regime: self.regime,
            protocol,
            top1: topk_accuracy(&preds, &truths, 1)?,
            top5: topk_accuracy(&preds, &truths, 5)?,
            n_tracks: preds.len(),
            n_unclassifiable: unclassifiable,
            per_genre,
            per_bucket,
            cosine_profile: None,
        };
        Ok(RunOutput {
            result,
            head: head.clone(),
            outcomes,
        })
    }
}

fn check_seeds(n_runs: usize, seeds: &[u64]) -> Result<()> {
    if seeds.len() != n_runs || n_runs == 0 {
        return Err(Error::invalid(format!("{n_runs} runs need {n_runs} seeds, got {}", seeds.len())));
    }
    let distinct: BTreeSet<u64> = seeds.iter().copied().collect();
    if distinct.len() != seeds.len() {
        return Err(Error::invalid("run seeds must be distinct"));
    }
    Ok(())
}

/// Real-singer identification: per run, sample classes, train a probe and
/// score the classes' test tracks.
pub fn run_identification(ctx: &ExperimentContext<'_>, n_classes: usize, n_runs: usize, seeds: &[u64]) -> Result<Vec<RunOutput>> {
    check_seeds(n_runs, seeds)?;
    seeds
        .iter()
        .map(|&s| ctx.evaluate(&ctx.train_head(Protocol::Identification, n_classes, s)?, Protocol::Identification, s))
        .collect()
}

/// Cloned-voice evaluation: every clone source is in the class set, the
/// probe sees real tracks only, and clone tracks are scored against their
/// source singer.
pub fn run_cloned_eval(ctx: &ExperimentContext<'_>, n_classes: usize, n_runs: usize, seeds: &[u64]) -> Result<Vec<RunOutput>> {
    check_seeds(n_runs, seeds)?;
    seeds
        .iter()
        .map(|&s| ctx.evaluate(&ctx.train_head(Protocol::Cloned, n_classes, s)?, Protocol::Cloned, s))
        .collect()
}

/// Mean similarity over all cross pairs of two embedding sets; `None` if
/// there are no pairs.
fn mean_cross(a: &[&[f32]], b: &[&[f32]]) -> Option<f64> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let mut s = 0.0;
    for x in a {
        for y in b {
            s += cosine(x, y);
        }
    }
    Some(s / (a.len() * b.len()) as f64)
}

/// Mean similarity over distinct pairs within one set; `None` below two items.
fn mean_within(a: &[&[f32]]) -> Option<f64> {
    if a.len() < 2 {
        return None;
    }
    let (mut s, mut n) = (0.0, 0usize);
    for i in 0..a.len() {
        for j in 0..a.len() {
            if i != j {
                s += cosine(a[i], a[j]);
                n += 1;
            }
        }
    }
    Some(s / n as f64)
}

/// For each test track, compares its mixture embeddings (the reference)
/// with five sets: another singer's test track, the singer's validation
/// track, the track's own vocal and instrumental stems at the same offsets,
/// and its other segments. Means are taken per track, then over tracks.
pub fn cosine_reference_analysis(
    entries: &[CatalogEntry],
    split: &SplitSpec,
    tables: &BTreeMap<SourceKind, EmbeddingTable>,
    seed: u64,
) -> Result<BTreeMap<String, f64>> {
    let get = |k: SourceKind| {
        tables
            .get(&k)
            .ok_or_else(|| Error::invalid(format!("cosine analysis needs {k} embeddings")))
    };
    let mix = get(SourceKind::Mixture)?;
    let voc = get(SourceKind::VocalStem)?;
    let inst = get(SourceKind::InstrumentalStem)?;
    let by_id: BTreeMap<&str, &CatalogEntry> = entries.iter().map(|e| (e.track_id.as_str(), e)).collect();
    let singer_of = |t: &str| by_id.get(t).map(|e| e.singer_id.clone());
    let tests: Vec<&str> = split.tracks(Role::IdTest);
    let vals: BTreeMap<String, &str> = split
        .tracks(Role::IdVal)
        .into_iter()
        .filter_map(|t| singer_of(t).map(|s| (s, t)))
        .collect();
    let mut rng = rng_for(seed, &["cosine-other"]);
    let vecs = |table: &'_ EmbeddingTable, t: &str| -> Vec<Vec<f32>> { table.track(t).iter().map(|(_, v)| v.clone()).collect() };
    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for &t in &tests {
        let singer = singer_of(t).ok_or_else(|| Error::invalid(format!("unknown test track `{t}`")))?;
        let gte = vecs(mix, t);
        if gte.is_empty() {
            continue;
        }
        let g: Vec<&[f32]> = gte.iter().map(Vec::as_slice).collect();
        let others: Vec<&str> = tests
            .iter()
            .copied()
            .filter(|o| singer_of(o).as_deref() != Some(singer.as_str()) && !mix.track(o).is_empty())
            .collect();
        let mut add = |key: &'static str, v: Option<f64>| {
            if let Some(v) = v {
                let slot = sums.entry(key).or_default();
                slot.0 += v;
                slot.1 += 1;
            }
        };
        if let Some(o) = others.choose(&mut rng) {
            let ov = vecs(mix, o);
            add("test/other", mean_cross(&g, &ov.iter().map(Vec::as_slice).collect::<Vec<_>>()));
        }
        if let Some(v) = vals.get(&singer) {
            let vv = vecs(mix, v);
            add("test/val", mean_cross(&g, &vv.iter().map(Vec::as_slice).collect::<Vec<_>>()));
        }
        let vv = vecs(voc, t);
        add("test/vocal", mean_cross(&g, &vv.iter().map(Vec::as_slice).collect::<Vec<_>>()));
        let iv = vecs(inst, t);
        add("test/instru", mean_cross(&g, &iv.iter().map(Vec::as_slice).collect::<Vec<_>>()));
        add("test/test", mean_within(&g));
    }
    let mut out = BTreeMap::new();
    for key in COSINE_KEYS {
        if let Some((s, n)) = sums.get(key) {
            out.insert(key.to_string(), s / *n as f64);
        }
    }
    Ok(out)
}
