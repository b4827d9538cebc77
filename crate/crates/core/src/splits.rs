//! Track filtering rules and deterministic contrastive / identification splits.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::vocal_segment_offsets;
use crate::error::{Error, Result};
use crate::manifest::{write_atomic, CatalogEntry};
use crate::rng::rng_for;

pub const SPLIT_SCHEMA_VERSION: u32 = 1;
/// Hop between the vocal segments that are classified and sampled.
pub const SEGMENT_HOP_S: f64 = 6.0;
pub const ID_VAL_SEGMENTS: usize = 4;

/// Vocalness threshold for the contrastive pool and the closed identification set.
pub const TRAIN_VOCALNESS: f64 = 0.75;
/// Vocalness threshold for open identification sets.
pub const OPEN_VOCALNESS: f64 = 0.5;
pub const MIN_CONTRASTIVE_TRACKS: usize = 2;
pub const MIN_OPEN_TRACKS: usize = 5;
pub const MIN_CLOSED_TRACKS: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    ContrastiveTrain,
    ContrastiveVal,
    IdTrain,
    IdVal,
    IdTest,
    ClonedEval,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::ContrastiveTrain => "contrastive_train",
            Role::ContrastiveVal => "contrastive_val",
            Role::IdTrain => "id_train",
            Role::IdVal => "id_val",
            Role::IdTest => "id_test",
            Role::ClonedEval => "cloned_eval",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Vocalness / track-count rule pair for an identification set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdRules {
    pub vocalness: f64,
    pub min_tracks: usize,
}

impl IdRules {
    pub const CLOSED: IdRules = IdRules {
        vocalness: TRAIN_VOCALNESS,
        min_tracks: MIN_CLOSED_TRACKS,
    };
    pub const OPEN: IdRules = IdRules {
        vocalness: OPEN_VOCALNESS,
        min_tracks: MIN_OPEN_TRACKS,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub schema_version: u32,
    pub seed: u64,
    pub assignments: BTreeMap<String, Role>,
    /// Fixed validation offsets in seconds: one per contrastive validation
    /// track, four per identification validation track.
    pub fixed_val_segments: BTreeMap<String, Vec<f64>>,
}

impl SplitSpec {
    pub fn new(seed: u64) -> Self {
        Self {
            schema_version: SPLIT_SCHEMA_VERSION,
            seed,
            assignments: BTreeMap::new(),
            fixed_val_segments: BTreeMap::new(),
        }
    }

    pub fn tracks(&self, role: Role) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|(_, r)| **r == role)
            .map(|(t, _)| t.as_str())
            .collect()
    }

    pub fn role(&self, track_id: &str) -> Option<Role> {
        self.assignments.get(track_id).copied()
    }

    /// Combines two disjoint splits (e.g. contrastive and identification).
    pub fn merge(mut self, other: SplitSpec) -> Result<Self> {
        for (t, r) in other.assignments {
            if let Some(prev) = self.assignments.insert(t.clone(), r) {
                return Err(Error::invalid(format!("track `{t}` assigned to both {prev} and {r}")));
            }
        }
        self.fixed_val_segments.extend(other.fixed_val_segments);
        Ok(self)
    }

    /// Checks the structural invariants against the manifest entries.
    pub fn validate(&self, entries: &[CatalogEntry]) -> Result<()> {
        let by_id: BTreeMap<&str, &CatalogEntry> = entries.iter().map(|e| (e.track_id.as_str(), e)).collect();
        let mut singer_roles: BTreeMap<&str, BTreeMap<Role, usize>> = BTreeMap::new();
        for (t, &role) in &self.assignments {
            let e = by_id
                .get(t.as_str())
                .ok_or_else(|| Error::invalid(format!("split names unknown track `{t}`")))?;
            if role != Role::ClonedEval {
                *singer_roles.entry(&e.singer_id).or_default().entry(role).or_default() += 1;
            }
        }
        for (singer, roles) in &singer_roles {
            let contrastive = roles.contains_key(&Role::ContrastiveTrain) || roles.contains_key(&Role::ContrastiveVal);
            let id = roles.contains_key(&Role::IdTrain) || roles.contains_key(&Role::IdVal) || roles.contains_key(&Role::IdTest);
            if contrastive && id {
                return Err(Error::invalid(format!("singer `{singer}` spans contrastive and identification pools")));
            }
            if id {
                let n = |r| roles.get(&r).copied().unwrap_or(0);
                if n(Role::IdTest) != 1 || n(Role::IdVal) != 1 || n(Role::IdTrain) < 3 {
                    return Err(Error::invalid(format!("singer `{singer}` violates the 1 test / 1 val / ≥3 train rule")));
                }
            }
            if let Some(&n) = roles.get(&Role::ContrastiveVal) {
                if n != 2 {
                    return Err(Error::invalid(format!("validation singer `{singer}` has {n} tracks")));
                }
            }
        }
        for (t, &role) in &self.assignments {
            let want = match role {
                Role::IdVal => Some(ID_VAL_SEGMENTS),
                Role::ContrastiveVal => Some(1),
                _ => None,
            };
            if let Some(k) = want {
                let got = self.fixed_val_segments.get(t).map_or(0, Vec::len);
                if got != k {
                    return Err(Error::invalid(format!("{role} track `{t}` has {got} fixed segments, expected {k}")));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: SplitSpec = serde_json::from_str(text)?;
        if spec.schema_version != SPLIT_SCHEMA_VERSION {
            return Err(Error::Format {
                what: "split",
                detail: format!("unsupported schema version {}", spec.schema_version),
            });
        }
        Ok(spec)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_json()?.as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

/// Keeps entries whose vocal fraction reaches `threshold`, preserving order.
pub fn filter_vocalness(entries: &[CatalogEntry], threshold: f64) -> Result<Vec<CatalogEntry>> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!("vocalness threshold {threshold} outside (0, 1]")));
    }
    Ok(entries
        .iter()
        .filter(|e| e.vocal_fraction >= threshold)
        .cloned()
        .collect())
}

/// Drops every track of singers with fewer than `k` tracks.
pub fn filter_min_tracks(entries: &[CatalogEntry], k: usize) -> Result<Vec<CatalogEntry>> {
    if k == 0 {
        return Err(Error::invalid("minimum track count must be at least 1"));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for e in entries {
        *counts.entry(&e.singer_id).or_default() += 1;
    }
    Ok(entries
        .iter()
        .filter(|e| counts[e.singer_id.as_str()] >= k)
        .cloned()
        .collect())
}

/// Offsets of the vocal segments of a track at the given hop.
pub fn vocal_offsets(entry: &CatalogEntry, hop_s: f64) -> Vec<f64> {
    vocal_segment_offsets(entry.duration_s, &entry.activity(), hop_s)
}

fn group_by_singer(entries: &[CatalogEntry]) -> BTreeMap<&str, Vec<&CatalogEntry>> {
    let mut out: BTreeMap<&str, Vec<&CatalogEntry>> = BTreeMap::new();
    for e in entries {
        out.entry(&e.singer_id).or_default().push(e);
    }
    for tracks in out.values_mut() {
        tracks.sort_by(|a, b| a.track_id.cmp(&b.track_id));
    }
    out
}

/// Moves `n_val_singers` singers to validation with two tracks and one
/// fixed vocal segment each; everyone else trains.
pub fn build_contrastive_split(entries: &[CatalogEntry], n_val_singers: usize, seed: u64) -> Result<SplitSpec> {
    let real: Vec<CatalogEntry> = entries.iter().filter(|e| !e.is_clone).cloned().collect();
    let singers = group_by_singer(&real);
    if let Some((s, _)) = singers.iter().find(|(_, t)| t.len() < 2) {
        return Err(Error::Infeasible(format!("singer `{s}` has fewer than two tracks")));
    }
    if n_val_singers > singers.len() {
        return Err(Error::Infeasible(format!(
            "{n_val_singers} validation singers requested from {}",
            singers.len()
        )));
    }
    let mut rng = rng_for(seed, &["contrastive-split"]);
    let mut names: Vec<&str> = singers.keys().copied().collect();
    names.shuffle(&mut rng);
    let val: BTreeSet<&str> = names[..n_val_singers].iter().copied().collect();

    let mut spec = SplitSpec::new(seed);
    for (singer, tracks) in &singers {
        if !val.contains(singer) {
            for t in tracks {
                spec.assignments.insert(t.track_id.clone(), Role::ContrastiveTrain);
            }
            continue;
        }
        let usable: Vec<&&CatalogEntry> = tracks
            .iter()
            .filter(|t| !vocal_offsets(t, SEGMENT_HOP_S).is_empty())
            .collect();
        if usable.len() < 2 {
            return Err(Error::Infeasible(format!(
                "validation singer `{singer}` lacks two tracks with vocal segments"
            )));
        }
        for t in usable.choose_multiple(&mut rng, 2) {
            let offsets = vocal_offsets(t, SEGMENT_HOP_S);
            let off = *offsets.choose(&mut rng).expect("non-empty");
            spec.assignments.insert(t.track_id.clone(), Role::ContrastiveVal);
            spec.fixed_val_segments.insert(t.track_id.clone(), vec![off]);
        }
    }
    Ok(spec)
}

fn pick_val_offsets<R: Rng>(offsets: &[f64], rng: &mut R) -> Vec<f64> {
    if offsets.len() >= ID_VAL_SEGMENTS {
        let mut v: Vec<f64> = offsets.choose_multiple(rng, ID_VAL_SEGMENTS).copied().collect();
        v.sort_by(f64::total_cmp);
        v
    } else {
        (0..ID_VAL_SEGMENTS)
            .map(|_| *offsets.choose(rng).expect("non-empty"))
            .collect()
    }
}

/// Per singer: one test track, one validation track with four fixed vocal
/// segments, the rest training. Clone tracks become `cloned_eval`.
pub fn build_id_split(entries: &[CatalogEntry], seed: u64) -> Result<SplitSpec> {
    let real: Vec<CatalogEntry> = entries.iter().filter(|e| !e.is_clone).cloned().collect();
    let singers = group_by_singer(&real);
    let mut spec = SplitSpec::new(seed);
    for (singer, tracks) in &singers {
        if tracks.len() < MIN_OPEN_TRACKS {
            return Err(Error::Infeasible(format!(
                "singer `{singer}` has {} tracks; identification needs at least {MIN_OPEN_TRACKS}",
                tracks.len()
            )));
        }
        let mut rng = rng_for(seed, &["id-split", singer]);
        let mut order: Vec<&CatalogEntry> = tracks.clone();
        order.shuffle(&mut rng);
        // The validation track needs vocal segments; test and train tracks
        // without any are kept (they become unclassifiable at evaluation).
        let val_pos = order[1..]
            .iter()
            .position(|t| !vocal_offsets(t, SEGMENT_HOP_S).is_empty())
            .map(|p| p + 1)
            .ok_or_else(|| Error::Infeasible(format!("singer `{singer}` has no track with vocal segments")))?;
        let val = order.remove(val_pos);
        spec.assignments.insert(val.track_id.clone(), Role::IdVal);
        spec.fixed_val_segments.insert(
            val.track_id.clone(),
            pick_val_offsets(&vocal_offsets(val, SEGMENT_HOP_S), &mut rng),
        );
        spec.assignments.insert(order[0].track_id.clone(), Role::IdTest);
        for t in &order[1..] {
            spec.assignments.insert(t.track_id.clone(), Role::IdTrain);
        }
    }
    for e in entries.iter().filter(|e| e.is_clone) {
        spec.assignments.insert(e.track_id.clone(), Role::ClonedEval);
    }
    Ok(spec)
}

/// Exactly `n` singers containing `must_include`, filled uniformly from the
/// remaining singers. Returned sorted.
pub fn sample_class_subset(
    id_singers: &[String],
    n: usize,
    must_include: &BTreeSet<String>,
    seed: u64,
) -> Result<Vec<String>> {
    let all: BTreeSet<&String> = id_singers.iter().collect();
    if let Some(m) = must_include.iter().find(|m| !all.contains(m)) {
        return Err(Error::invalid(format!("mandated singer `{m}` is not an identification singer")));
    }
    if must_include.len() > n || n > all.len() {
        return Err(Error::Infeasible(format!(
            "cannot pick {n} classes from {} singers with {} mandated",
            all.len(),
            must_include.len()
        )));
    }
    let rest: Vec<&String> = all.iter().copied().filter(|s| !must_include.contains(*s)).collect();
    let mut rng = rng_for(seed, &["class-subset"]);
    let mut out: Vec<String> = must_include.iter().cloned().collect();
    out.extend(rest.choose_multiple(&mut rng, n - must_include.len()).map(|s| (*s).clone()));
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(track: &str, singer: &str, frac: f64) -> CatalogEntry {
        CatalogEntry {
            track_id: track.into(),
            singer_id: singer.into(),
            genre: "dry".into(),
            instrumental_style_id: None,
            duration_s: 30.0,
            vocal_mask: vec![true; 10],
            vocal_fraction: frac,
            is_clone: false,
            clone_source_singer: None,
            pool: None,
            stems: Default::default(),
            render: None,
        }
    }

    fn singers(n: usize, tracks: usize) -> Vec<CatalogEntry> {
        (0..n)
            .flat_map(|s| (0..tracks).map(move |t| entry(&format!("s{s}_t{t}"), &format!("s{s}"), 1.0)))
            .collect()
    }

    #[test]
    fn vocalness_filter_examples() {
        let es = vec![entry("a", "x", 0.8), entry("b", "x", 0.7), entry("c", "x", 0.75)];
        let ids = |v: Vec<CatalogEntry>| v.into_iter().map(|e| e.track_id).collect::<Vec<_>>();
        assert_eq!(ids(filter_vocalness(&es, 0.75).unwrap()), ["a", "c"]);
        assert_eq!(ids(filter_vocalness(&es, 0.5).unwrap()), ["a", "b", "c"]);
        assert!(filter_vocalness(&[], 0.5).unwrap().is_empty());
        assert!(filter_vocalness(&es, 0.0).is_err());
        assert!(filter_vocalness(&es, 1.5).is_err());
    }

    #[test]
    fn min_track_filter_examples() {
        let es = vec![entry("a1", "A", 1.0), entry("a2", "A", 1.0), entry("b1", "B", 1.0)];
        let kept = filter_min_tracks(&es, 2).unwrap();
        assert_eq!(kept.len(), 2);
        assert!(kept.iter().all(|e| e.singer_id == "A"));
        assert_eq!(filter_min_tracks(&es, 1).unwrap(), es);
        assert!(filter_min_tracks(&singers(1, 6), 7).unwrap().is_empty());
    }

    #[test]
    fn contrastive_split_counts() {
        let es = singers(10, 3);
        let spec = build_contrastive_split(&es, 4, 5).unwrap();
        let val = spec.tracks(Role::ContrastiveVal);
        assert_eq!(val.len(), 8);
        let train_singers: BTreeSet<&str> = spec
            .tracks(Role::ContrastiveTrain)
            .iter()
            .map(|t| t.split('_').next().unwrap())
            .collect();
        assert_eq!(train_singers.len(), 6);
        assert!(val.iter().all(|t| spec.fixed_val_segments[*t].len() == 1));
        assert_eq!(spec, build_contrastive_split(&es, 4, 5).unwrap());
        assert!(build_contrastive_split(&es, 11, 5).is_err());
        spec.validate(&es).unwrap();
    }

    #[test]
    fn id_split_counts() {
        let es = singers(3, 8);
        let spec = build_id_split(&es, 1).unwrap();
        assert_eq!(spec.tracks(Role::IdTest).len(), 3);
        assert_eq!(spec.tracks(Role::IdVal).len(), 3);
        assert_eq!(spec.tracks(Role::IdTrain).len(), 18);
        spec.validate(&es).unwrap();
        let five = build_id_split(&singers(1, 5), 1).unwrap();
        assert_eq!(five.tracks(Role::IdTrain).len(), 3);
        assert!(build_id_split(&singers(1, 4), 1).is_err());
    }

    #[test]
    fn short_val_track_samples_with_replacement() {
        let mut es = singers(1, 5);
        for e in &mut es {
            // 12 s, all vocal → offsets 0 and 6 only.
            e.duration_s = 12.0;
            e.vocal_mask = vec![true; 4];
        }
        let spec = build_id_split(&es, 2).unwrap();
        let val = spec.tracks(Role::IdVal)[0];
        let offs = &spec.fixed_val_segments[val];
        assert_eq!(offs.len(), 4);
        assert!(offs.iter().all(|o| *o == 0.0 || *o == 6.0));
    }

    #[test]
    fn class_subset_rules() {
        let ids: Vec<String> = (0..10).map(|i| format!("s{i}")).collect();
        let must: BTreeSet<String> = ["s1".to_string(), "s7".to_string()].into();
        assert_eq!(sample_class_subset(&ids, 2, &must, 3).unwrap(), ["s1", "s7"]);
        let sub = sample_class_subset(&ids, 6, &must, 3).unwrap();
        assert_eq!(sub.len(), 6);
        assert!(must.iter().all(|m| sub.contains(m)));
        assert_eq!(sub, sample_class_subset(&ids, 6, &must, 3).unwrap());
        assert!(sample_class_subset(&ids, 11, &must, 3).is_err());
        assert!(sample_class_subset(&ids, 1, &must, 3).is_err());
    }

    #[test]
    fn json_round_trip_and_merge_conflict() {
        let es = singers(6, 8);
        let spec = build_id_split(&es, 4).unwrap();
        assert_eq!(SplitSpec::from_json(&spec.to_json().unwrap()).unwrap(), spec);
        assert!(spec.clone().merge(spec).is_err());
    }
}
