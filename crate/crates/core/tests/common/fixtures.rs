//! Hand-built manifests whose filtering outcomes are worked out by hand.

use singerlab::manifest::CatalogEntry;

pub fn entry(track: &str, singer: &str, vocal_fraction: f64) -> CatalogEntry {
    CatalogEntry {
        track_id: track.into(),
        singer_id: singer.into(),
        genre: "dry".into(),
        instrumental_style_id: None,
        duration_s: 30.0,
        vocal_mask: vec![true; 10],
        vocal_fraction,
        is_clone: false,
        clone_source_singer: None,
        pool: None,
        stems: Default::default(),
        render: None,
    }
}

fn many(singer: &str, fractions: &[f64]) -> Vec<CatalogEntry> {
    fractions
        .iter()
        .enumerate()
        .map(|(i, &f)| entry(&format!("{singer}{i}"), singer, f))
        .collect()
}

/// Contrastive pool at 0.75 / ≥ 2 tracks keeps a0, a1, c0, c1, c2:
/// a2 (0.74) fails vocalness, b keeps one track and is dropped.
pub fn contrastive_fixture() -> (Vec<CatalogEntry>, Vec<&'static str>) {
    let mut v = many("a", &[0.80, 0.75, 0.74]);
    v.extend(many("b", &[0.90, 0.60]));
    v.extend(many("c", &[1.0, 0.76, 0.99]));
    (v, vec!["a0", "a1", "c0", "c1", "c2"])
}

/// Identification pools. Closed (0.75 / ≥ 7): d keeps 7 of 8, e drops to 6
/// and is removed, f has exactly 7 at the boundary. Open (0.5 / ≥ 5): d keeps
/// all 8, e keeps 7, f keeps 7, g keeps 5 of 6, h drops to 4 and is removed.
pub fn id_fixture() -> Vec<CatalogEntry> {
    let mut v = many("d", &[0.9, 0.8, 0.9, 0.95, 0.70, 0.8, 0.85, 0.9]);
    v.extend(many("e", &[0.9, 0.8, 0.9, 0.95, 0.74, 0.8, 0.85]));
    v.extend(many("f", &[0.75; 7]));
    v.extend(many("g", &[0.5, 0.6, 0.49, 0.7, 0.9, 0.55]));
    v.extend(many("h", &[0.6, 0.45, 0.6, 0.9, 0.8]));
    v
}

pub fn expected_closed() -> Vec<&'static str> {
    vec!["d0", "d1", "d2", "d3", "d5", "d6", "d7", "f0", "f1", "f2", "f3", "f4", "f5", "f6"]
}

pub fn expected_open() -> Vec<&'static str> {
    vec![
        "d0", "d1", "d2", "d3", "d4", "d5", "d6", "d7", "e0", "e1", "e2", "e3", "e4", "e5", "e6", "f0", "f1", "f2",
        "f3", "f4", "f5", "f6", "g0", "g1", "g3", "g4", "g5",
    ]
}
