mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::fixtures;
use proptest::prelude::*;
use singerlab::manifest::CatalogEntry;
use singerlab::splits::*;

fn ids(entries: &[CatalogEntry]) -> Vec<&str> {
    entries.iter().map(|e| e.track_id.as_str()).collect()
}

fn apply(entries: &[CatalogEntry], rules: IdRules) -> Vec<CatalogEntry> {
    filter_min_tracks(&filter_vocalness(entries, rules.vocalness).unwrap(), rules.min_tracks).unwrap()
}

#[test]
fn contrastive_filter_fixture() {
    let (entries, want) = fixtures::contrastive_fixture();
    let kept = filter_min_tracks(
        &filter_vocalness(&entries, TRAIN_VOCALNESS).unwrap(),
        MIN_CONTRASTIVE_TRACKS,
    )
    .unwrap();
    assert_eq!(ids(&kept), want);
}

#[test]
fn closed_and_open_filter_fixtures() {
    let entries = fixtures::id_fixture();
    assert_eq!(ids(&apply(&entries, IdRules::CLOSED)), fixtures::expected_closed());
    assert_eq!(ids(&apply(&entries, IdRules::OPEN)), fixtures::expected_open());
}

#[test]
fn thresholds_are_the_published_values() {
    assert_eq!((TRAIN_VOCALNESS, OPEN_VOCALNESS), (0.75, 0.5));
    assert_eq!((MIN_CONTRASTIVE_TRACKS, MIN_OPEN_TRACKS, MIN_CLOSED_TRACKS), (2, 5, 7));
    assert_eq!((IdRules::CLOSED.vocalness, IdRules::CLOSED.min_tracks), (0.75, 7));
    assert_eq!((IdRules::OPEN.vocalness, IdRules::OPEN.min_tracks), (0.5, 5));
}

fn manifest_strategy() -> impl Strategy<Value = Vec<CatalogEntry>> {
    // 2..8 singers, each with 5..10 tracks of 24..40 s and random masks.
    prop::collection::vec(
        prop::collection::vec((24u32..40, prop::collection::vec(any::<bool>(), 13)), 5..10),
        2..8,
    )
    .prop_map(|singers| {
        let mut out = Vec::new();
        for (s, tracks) in singers.into_iter().enumerate() {
            for (t, (dur, mut mask)) in tracks.into_iter().enumerate() {
                let windows = (dur as f64 / 3.0).ceil() as usize;
                mask.truncate(windows);
                mask.resize(windows, true);
                // Keep at least one fully voiced 6 s stretch.
                mask[0] = true;
                mask[1] = true;
                let frac = mask.iter().filter(|&&b| b).count() as f64 / windows as f64;
                let mut e = fixtures::entry(&format!("s{s}t{t}"), &format!("s{s}"), frac);
                e.duration_s = dur as f64;
                e.vocal_mask = mask;
                out.push(e);
            }
        }
        out
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn id_split_structure(entries in manifest_strategy(), seed in any::<u64>()) {
        let split = build_id_split(&entries, seed).unwrap();
        split.validate(&entries).unwrap();
        prop_assert_eq!(split.assignments.len(), entries.len());
        let mut per_singer: BTreeMap<&str, BTreeMap<Role, usize>> = BTreeMap::new();
        for e in &entries {
            *per_singer.entry(&e.singer_id).or_default().entry(split.role(&e.track_id).unwrap()).or_default() += 1;
        }
        for (singer, roles) in per_singer {
            let total: usize = roles.values().sum();
            prop_assert_eq!(roles.get(&Role::IdTest).copied(), Some(1), "{}", singer);
            prop_assert_eq!(roles.get(&Role::IdVal).copied(), Some(1), "{}", singer);
            prop_assert_eq!(roles.get(&Role::IdTrain).copied(), Some(total - 2), "{}", singer);
        }
        for t in split.tracks(Role::IdVal) {
            let e = entries.iter().find(|e| e.track_id == t).unwrap();
            let allowed = vocal_offsets(e, SEGMENT_HOP_S);
            let fixed = &split.fixed_val_segments[t];
            prop_assert_eq!(fixed.len(), ID_VAL_SEGMENTS);
            prop_assert!(fixed.iter().all(|o| allowed.contains(o)));
        }
        prop_assert_eq!(build_id_split(&entries, seed).unwrap(), split);
    }

    #[test]
    fn contrastive_split_structure(entries in manifest_strategy(), seed in any::<u64>(), n_val in 0usize..3) {
        let n_singers = entries.iter().map(|e| &e.singer_id).collect::<BTreeSet<_>>().len();
        let n_val = n_val.min(n_singers);
        let split = build_contrastive_split(&entries, n_val, seed).unwrap();
        split.validate(&entries).unwrap();
        let val = split.tracks(Role::ContrastiveVal);
        prop_assert_eq!(val.len(), 2 * n_val);
        let val_singers: BTreeSet<&str> = val
            .iter()
            .map(|t| entries.iter().find(|e| e.track_id == *t).unwrap().singer_id.as_str())
            .collect();
        prop_assert_eq!(val_singers.len(), n_val);
        for e in &entries {
            let role = split.role(&e.track_id);
            if val_singers.contains(e.singer_id.as_str()) {
                prop_assert!(role != Some(Role::ContrastiveTrain));
            } else {
                prop_assert_eq!(role, Some(Role::ContrastiveTrain));
            }
        }
    }

    #[test]
    fn filters_never_keep_what_rules_forbid(entries in manifest_strategy(), open in any::<bool>()) {
        let rules = if open { IdRules::OPEN } else { IdRules::CLOSED };
        let kept = apply(&entries, rules);
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for e in &kept {
            prop_assert!(e.vocal_fraction >= rules.vocalness);
            *counts.entry(&e.singer_id).or_default() += 1;
        }
        prop_assert!(counts.values().all(|&c| c >= rules.min_tracks));
        // Nothing eligible is lost.
        for e in &entries {
            let eligible = entries
                .iter()
                .filter(|x| x.singer_id == e.singer_id && x.vocal_fraction >= rules.vocalness)
                .count();
            if e.vocal_fraction >= rules.vocalness && eligible >= rules.min_tracks {
                prop_assert!(kept.iter().any(|k| k.track_id == e.track_id));
            }
        }
    }
}
