//! Singer-level positive pairs: two segments of the same singer taken from
//! two different tracks, with the source kind chosen by the regime.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::SourceKind;
use crate::error::{Error, Result};
use crate::manifest::CatalogEntry;
use crate::rng::rng_for;
use crate::splits::{vocal_offsets, Role, SplitSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Mixture,
    Vocal,
    Hybrid,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Mixture, Regime::Vocal, Regime::Hybrid];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Mixture => "mixture",
            Regime::Vocal => "vocal",
            Regime::Hybrid => "hybrid",
        }
    }

    /// Input domain used when evaluating a model trained under this regime.
    pub fn eval_kind(self) -> SourceKind {
        match self {
            Regime::Vocal => SourceKind::VocalStem,
            Regime::Mixture | Regime::Hybrid => SourceKind::Mixture,
        }
    }

    /// Source kinds a model of this regime ever sees during training.
    pub fn train_kinds(self) -> Vec<SourceKind> {
        match self {
            Regime::Mixture => vec![SourceKind::Mixture],
            Regime::Vocal => vec![SourceKind::VocalStem],
            Regime::Hybrid => vec![SourceKind::VocalStem, SourceKind::Mixture],
        }
    }

    fn draw_kind<R: Rng>(self, rng: &mut R) -> SourceKind {
        match self {
            Regime::Mixture => SourceKind::Mixture,
            Regime::Vocal => SourceKind::VocalStem,
            Regime::Hybrid => {
                if rng.random::<bool>() {
                    SourceKind::VocalStem
                } else {
                    SourceKind::Mixture
                }
            }
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixture" => Ok(Regime::Mixture),
            "vocal" => Ok(Regime::Vocal),
            "hybrid" => Ok(Regime::Hybrid),
            other => Err(Error::invalid(format!(
                "unknown regime `{other}` (expected mixture, vocal or hybrid)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRef {
    pub track_id: String,
    pub offset_s: f64,
    pub kind: SourceKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub inputs: Vec<SegmentRef>,
    pub singer_ids: Vec<String>,
    pub regime: Regime,
}

impl PairBatch {
    pub fn pairs(&self) -> usize {
        self.inputs.len() / 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolTrack {
    pub track_id: String,
    pub offsets: Vec<f64>,
}

/// Training singers with their tracks and candidate segment offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastivePool {
    pub singers: Vec<(String, Vec<PoolTrack>)>,
}

impl ContrastivePool {
    /// Collects `contrastive_train` tracks that have at least one vocal
    /// segment at `hop_s`; singers left with fewer than two tracks are dropped.
    pub fn from_split(entries: &[CatalogEntry], split: &SplitSpec, hop_s: f64) -> Result<Self> {
        let mut by_singer: BTreeMap<&str, Vec<PoolTrack>> = BTreeMap::new();
        for e in entries {
            if split.role(&e.track_id) != Some(Role::ContrastiveTrain) {
                continue;
            }
            let offsets = vocal_offsets(e, hop_s);
            if !offsets.is_empty() {
                by_singer.entry(&e.singer_id).or_default().push(PoolTrack {
                    track_id: e.track_id.clone(),
                    offsets,
                });
            }
        }
        let singers: Vec<(String, Vec<PoolTrack>)> = by_singer
            .into_iter()
            .filter(|(_, t)| t.len() >= 2)
            .map(|(s, t)| (s.to_string(), t))
            .collect();
        let pool = Self { singers };
        pool.check()?;
        Ok(pool)
    }

    fn check(&self) -> Result<()> {
        if self.singers.len() < 2 {
            return Err(Error::Infeasible(format!(
                "contrastive pool has {} singers with two usable tracks; at least 2 are needed",
                self.singers.len()
            )));
        }
        Ok(())
    }

    pub fn n_singers(&self) -> usize {
        self.singers.len()
    }

    /// Every (track, offset) in the pool.
    pub fn segments(&self) -> impl Iterator<Item = (&str, f64)> {
        self.singers
            .iter()
            .flat_map(|(_, ts)| ts.iter())
            .flat_map(|t| t.offsets.iter().map(move |&o| (t.track_id.as_str(), o)))
    }
}

/// `b` positive pairs. Singers are drawn without replacement within the batch
/// when the pool allows it, otherwise with replacement.
pub fn sample_pair_batch<R: Rng>(pool: &ContrastivePool, regime: Regime, b: usize, rng: &mut R) -> Result<PairBatch> {
    pool.check()?;
    if b == 0 {
        return Err(Error::invalid("batch must contain at least one pair"));
    }
    let picks: Vec<usize> = if b <= pool.singers.len() {
        let mut idx: Vec<usize> = (0..pool.singers.len()).collect();
        idx.partial_shuffle(rng, b);
        idx.truncate(b);
        idx
    } else {
        (0..b).map(|_| rng.random_range(0..pool.singers.len())).collect()
    };
    let mut inputs = Vec::with_capacity(2 * b);
    let mut singer_ids = Vec::with_capacity(2 * b);
    for s in picks {
        let (singer, tracks) = &pool.singers[s];
        for t in tracks.choose_multiple(rng, 2) {
            inputs.push(SegmentRef {
                track_id: t.track_id.clone(),
                offset_s: *t.offsets.choose(rng).expect("non-empty"),
                kind: regime.draw_kind(rng),
            });
            singer_ids.push(singer.clone());
        }
    }
    Ok(PairBatch {
        inputs,
        singer_ids,
        regime,
    })
}

/// The fixed validation pairs: each validation singer's two tracks at their
/// fixed offsets. Hybrid source kinds are drawn once from `seed`.
pub fn validation_pairs(entries: &[CatalogEntry], split: &SplitSpec, regime: Regime, seed: u64) -> Result<PairBatch> {
    let mut by_singer: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for e in entries {
        if split.role(&e.track_id) == Some(Role::ContrastiveVal) {
            by_singer.entry(&e.singer_id).or_default().push(&e.track_id);
        }
    }
    let mut rng = rng_for(seed, &["validation-kinds", regime.as_str()]);
    let mut inputs = Vec::new();
    let mut singer_ids = Vec::new();
    for (singer, tracks) in by_singer {
        if tracks.len() != 2 {
            return Err(Error::invalid(format!("validation singer `{singer}` has {} tracks", tracks.len())));
        }
        for t in tracks {
            let off = split
                .fixed_val_segments
                .get(t)
                .and_then(|v| v.first())
                .ok_or_else(|| Error::invalid(format!("validation track `{t}` has no fixed segment")))?;
            inputs.push(SegmentRef {
                track_id: t.to_string(),
                offset_s: *off,
                kind: regime.draw_kind(&mut rng),
            });
            singer_ids.push(singer.to_string());
        }
    }
    if inputs.len() < 4 {
        return Err(Error::Infeasible("contrastive validation needs at least two singers".into()));
    }
    Ok(PairBatch {
        inputs,
        singer_ids,
        regime,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    fn pool(singers: usize, tracks: usize) -> ContrastivePool {
        ContrastivePool {
            singers: (0..singers)
                .map(|s| {
                    (
                        format!("c{s}"),
                        (0..tracks)
                            .map(|t| PoolTrack {
                                track_id: format!("c{s}_t{t}"),
                                offsets: vec![0.0, 6.0, 12.0],
                            })
                            .collect(),
                    )
                })
                .collect(),
        }
    }

    #[test]
    fn pairs_share_singer_on_distinct_tracks() {
        let p = pool(10, 3);
        let mut rng = rng_for(1, &["t"]);
        for regime in Regime::ALL {
            let b = sample_pair_batch(&p, regime, 8, &mut rng).unwrap();
            assert_eq!(b.inputs.len(), 16);
            for m in 0..8 {
                assert_eq!(b.singer_ids[2 * m], b.singer_ids[2 * m + 1]);
                assert_ne!(b.inputs[2 * m].track_id, b.inputs[2 * m + 1].track_id);
            }
            let distinct: std::collections::BTreeSet<_> = b.singer_ids.iter().collect();
            assert_eq!(distinct.len(), 8);
            if regime == Regime::Vocal {
                assert!(b.inputs.iter().all(|s| s.kind == SourceKind::VocalStem));
            }
            if regime == Regime::Mixture {
                assert!(b.inputs.iter().all(|s| s.kind == SourceKind::Mixture));
            }
        }
    }

    #[test]
    fn small_pool_samples_with_replacement() {
        let p = pool(3, 2);
        let b = sample_pair_batch(&p, Regime::Vocal, 8, &mut rng_for(2, &["t"])).unwrap();
        assert_eq!(b.pairs(), 8);
        for m in 0..8 {
            assert_ne!(b.inputs[2 * m].track_id, b.inputs[2 * m + 1].track_id);
        }
        assert!(sample_pair_batch(&pool(1, 2), Regime::Vocal, 1, &mut rng_for(2, &["t"])).is_err());
    }

    #[test]
    fn regime_parsing() {
        assert_eq!("hybrid".parse::<Regime>().unwrap(), Regime::Hybrid);
        assert!("stems".parse::<Regime>().is_err());
        assert_eq!(Regime::Vocal.eval_kind(), SourceKind::VocalStem);
        assert_eq!(Regime::Hybrid.eval_kind(), SourceKind::Mixture);
    }
}
