//! Singer-identification probe on frozen embeddings: head training with the
//! plateau schedule, majority-vote track prediction and top-k scoring.

use std::path::Path;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::contrastive::{plateau_step, projector_dims, PlateauAction, PlateauConfig, PlateauState};
use crate::embeddings::FrozenEncoder;
use crate::error::{Error, Result};
use crate::manifest::write_atomic;
use crate::nn::ops::softmax_rows;
use crate::nn::{Adam, AdamConfig, BnMlp, Checkpoint, NamedTensor};
use crate::rng::rng_for;

pub const PROBE_BATCH: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub iters_per_epoch: usize,
    pub max_val_iters: usize,
    pub max_epochs: usize,
    pub plateau: PlateauConfig,
    #[serde(default)]
    pub adam: AdamConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            lr: 0.01,
            batch_size: PROBE_BATCH,
            iters_per_epoch: 32,
            max_val_iters: 32,
            max_epochs: 500,
            plateau: PlateauConfig::probe(),
            adam: AdamConfig::default(),
        }
    }
}

/// Embeddings the probe learns from. `train[c]` lists the tracks of class
/// `c`, each a list of segment embeddings.
#[derive(Debug, Clone)]
pub struct ProbeData<'a> {
    pub classes: Vec<String>,
    pub train: Vec<Vec<Vec<&'a [f32]>>>,
    pub val: Vec<(&'a [f32], usize)>,
}

impl ProbeData<'_> {
    fn validate(&self, dim: usize) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::invalid("a probe needs at least two classes"));
        }
        if self.train.len() != self.classes.len() {
            return Err(Error::Shape("training tracks do not cover every class".into()));
        }
        for (c, tracks) in self.train.iter().enumerate() {
            if !tracks.iter().any(|t| !t.is_empty()) {
                return Err(Error::Infeasible(format!(
                    "class `{}` has no training segments",
                    self.classes[c]
                )));
            }
            if tracks.iter().flatten().any(|v| v.len() != dim) {
                return Err(Error::Shape("training embedding dimension mismatch".into()));
            }
        }
        if self.val.is_empty() {
            return Err(Error::invalid("probe validation set is empty"));
        }
        if self.val.iter().any(|(v, c)| v.len() != dim || *c >= self.classes.len()) {
            return Err(Error::Shape("validation segment mismatch".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ProbeHead {
    pub classes: Vec<String>,
    pub mlp: BnMlp,
    pub params: Vec<f32>,
    pub buffers: Vec<f32>,
}

impl ProbeHead {
    /// Same shape as the projector with the last width set to the class count.
    pub fn new(embed_dim: usize, classes: Vec<String>, seed: u64) -> Result<Self> {
        if classes.len() < 2 {
            return Err(Error::invalid("a probe needs at least two classes"));
        }
        let mut dims = projector_dims(embed_dim);
        dims[2] = classes.len();
        let mlp = BnMlp::new(embed_dim, dims)?;
        let params = mlp.init_params(&mut rng_for(seed, &["probe-init"]));
        let buffers = mlp.init_buffers();
        Ok(Self {
            classes,
            mlp,
            params,
            buffers,
        })
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_index(&self, singer: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == singer)
    }

    /// Softmax probabilities in inference mode, one row per input.
    pub fn probabilities(&self, x: &[f32], rows: usize) -> Result<Vec<f32>> {
        let mut logits = self.mlp.forward_eval(&self.params, &self.buffers, x, rows)?;
        softmax_rows(&mut logits, self.n_classes());
        Ok(logits)
    }

    pub fn to_checkpoint(&self, meta: serde_json::Value) -> Checkpoint {
        let mut tensors = self.mlp.layout().export("probe.", &self.params);
        tensors.push(NamedTensor {
            name: "probe_buffers.running".into(),
            shape: vec![self.buffers.len()],
            data: self.buffers.clone(),
        });
        Checkpoint {
            meta: serde_json::json!({
                "classes": self.classes,
                "input_dim": self.mlp.input_dim(),
                "dims": self.mlp.dims(),
                "extra": meta,
            }),
            tensors,
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let classes: Vec<String> = serde_json::from_value(ckpt.meta["classes"].clone())?;
        let input: usize = serde_json::from_value(ckpt.meta["input_dim"].clone())?;
        let dims: [usize; 3] = serde_json::from_value(ckpt.meta["dims"].clone())?;
        let mlp = BnMlp::new(input, dims)?;
        if dims[2] != classes.len() {
            return Err(Error::Shape("probe output width differs from its class list".into()));
        }
        let params = mlp.layout().import("probe.", ckpt)?;
        let buffers = ckpt.get("probe_buffers.running")?.data.clone();
        if buffers.len() != mlp.buffer_len() {
            return Err(Error::Shape("probe running statistics have the wrong size".into()));
        }
        Ok(Self {
            classes,
            mlp,
            params,
            buffers,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct ProbeOutcome {
    pub head: ProbeHead,
    pub history: Vec<ProbeEpoch>,
}

/// Mean cross-entropy and its gradient w.r.t. the logits.
fn cross_entropy(logits: &[f32], labels: &[usize], n_classes: usize) -> (f64, Vec<f32>) {
    let mut probs = logits.to_vec();
    softmax_rows(&mut probs, n_classes);
    let rows = labels.len();
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let p = &mut probs[r * n_classes..(r + 1) * n_classes];
        loss -= (p[y] as f64).max(1e-30).ln();
        p[y] -= 1.0;
        for v in p.iter_mut() {
            *v /= rows as f32;
        }
    }
    (loss / rows as f64, probs)
}

fn validation(head: &ProbeHead, data: &ProbeData<'_>, cfg: &ProbeConfig) -> Result<(f64, f64)> {
    let dim = head.mlp.input_dim();
    let n = head.n_classes();
    let chunk = data.val.len().div_ceil(cfg.max_val_iters).max(cfg.batch_size);
    let (mut loss, mut correct) = (0.0, 0usize);
    for part in data.val.chunks(chunk) {
        let mut x = Vec::with_capacity(part.len() * dim);
        for (v, _) in part {
            x.extend_from_slice(v);
        }
        let probs = head.probabilities(&x, part.len())?;
        for (r, (_, y)) in part.iter().enumerate() {
            let p = &probs[r * n..(r + 1) * n];
            loss -= (p[*y] as f64).max(1e-30).ln();
            let arg = argmax(p);
            correct += usize::from(arg == *y);
        }
    }
    let m = data.val.len() as f64;
    Ok((loss / m, correct as f64 / m))
}

fn argmax(p: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Trains a probe head on frozen embeddings. Batches draw a uniform class,
/// then a uniform track of that class, then a uniform segment.
pub fn train_probe(data: &ProbeData<'_>, frozen: &FrozenEncoder, cfg: &ProbeConfig, seed: u64) -> Result<ProbeOutcome> {
    frozen.verify()?;
    let dim = frozen.encoder.embed_dim();
    data.validate(dim)?;
    let mut head = ProbeHead::new(dim, data.classes.clone(), seed)?;
    let mut adam = Adam::new(head.params.len(), cfg.adam);
    let mut plateau = PlateauState::new(cfg.lr, cfg.plateau)?;
    let mut rng = rng_for(seed, &["probe-batches"]);
    let n = head.n_classes();
    let usable: Vec<Vec<&Vec<&[f32]>>> = data
        .train
        .iter()
        .map(|tracks| tracks.iter().filter(|t| !t.is_empty()).collect())
        .collect();
    let mut history = Vec::new();
    for epoch in 1..=cfg.max_epochs {
        let lr = plateau.lr;
        let mut sum = 0.0;
        for _ in 0..cfg.iters_per_epoch {
            let mut x = Vec::with_capacity(cfg.batch_size * dim);
            let mut labels = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let c = rand::Rng::random_range(&mut rng, 0..n);
                let track = usable[c].choose(&mut rng).expect("validated non-empty");
                x.extend_from_slice(track.choose(&mut rng).expect("non-empty track"));
                labels.push(c);
            }
            let (logits, cache) =
                head.mlp
                    .forward_train(&head.params, Some(&mut head.buffers), &x, cfg.batch_size)?;
            let (loss, d_logits) = cross_entropy(&logits, &labels, n);
            if !loss.is_finite() {
                return Err(Error::NonFinite("probe loss"));
            }
            let mut grads = vec![0.0f32; head.params.len()];
            head.mlp.backward(&head.params, &cache, &d_logits, &mut grads);
            adam.step(&mut head.params, &grads, lr);
            sum += loss;
        }
        let (val_loss, val_accuracy) = validation(&head, data, cfg)?;
        history.push(ProbeEpoch {
            epoch,
            train_loss: sum / cfg.iters_per_epoch as f64,
            val_loss,
            val_accuracy,
            lr,
        });
        let (next, action) = plateau_step(&plateau, val_loss)?;
        plateau = next;
        if action == PlateauAction::Stop {
            break;
        }
    }
    frozen.verify()?;
    log::debug!(
        "probe trained {} epochs, final val acc {:.3}",
        history.len(),
        history.last().map_or(0.0, |h| h.val_accuracy)
    );
    Ok(ProbeOutcome { head, history })
}

/// Majority-vote prediction for one track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackPrediction {
    pub track_id: String,
    pub votes: Vec<usize>,
    pub prob_sums: Vec<f64>,
    pub ranking: Vec<usize>,
    pub top1: usize,
}

impl TrackPrediction {
    /// Tallies per-segment probability rows. Ranking: votes desc, summed
    /// probability desc, class index asc.
    pub fn from_probabilities(track_id: &str, probs: &[f32], n_classes: usize) -> Result<Self> {
        if probs.is_empty() || probs.len() % n_classes != 0 {
            return Err(Error::invalid(format!("track `{track_id}` has no segments to vote")));
        }
        let mut votes = vec![0usize; n_classes];
        let mut prob_sums = vec![0.0f64; n_classes];
        for row in probs.chunks_exact(n_classes) {
            votes[argmax(row)] += 1;
            for (s, &p) in prob_sums.iter_mut().zip(row) {
                *s += p as f64;
            }
        }
        let mut ranking: Vec<usize> = (0..n_classes).collect();
        ranking.sort_by(|&a, &b| {
            votes[b]
                .cmp(&votes[a])
                .then(prob_sums[b].total_cmp(&prob_sums[a]))
                .then(a.cmp(&b))
        });
        Ok(Self {
            track_id: track_id.to_string(),
            top1: ranking[0],
            votes,
            prob_sums,
            ranking,
        })
    }

    pub fn rank_of(&self, class: usize) -> Option<usize> {
        self.ranking.iter().position(|&c| c == class)
    }
}

/// Classified tracks carry a prediction; tracks without vocal segments are
/// unclassifiable and excluded from accuracy denominators.
#[derive(Debug, Clone, PartialEq)]
pub enum TrackOutcome {
    Classified(TrackPrediction),
    Unclassifiable { track_id: String },
}

/// Classifies every segment embedding of a track and votes.
pub fn predict_track(head: &ProbeHead, track_id: &str, segments: &[&[f32]]) -> Result<TrackOutcome> {
    if segments.is_empty() {
        return Ok(TrackOutcome::Unclassifiable {
            track_id: track_id.to_string(),
        });
    }
    let dim = head.mlp.input_dim();
    let mut x = Vec::with_capacity(segments.len() * dim);
    for s in segments {
        if s.len() != dim {
            return Err(Error::Shape("segment embedding dimension mismatch".into()));
        }
        x.extend_from_slice(s);
    }
    let probs = head.probabilities(&x, segments.len())?;
    Ok(TrackOutcome::Classified(TrackPrediction::from_probabilities(
        track_id,
        &probs,
        head.n_classes(),
    )?))
}

/// Fraction of predictions whose true class is within the first `k` ranks.
pub fn topk_accuracy(predictions: &[TrackPrediction], truths: &[usize], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if predictions.len() != truths.len() {
        return Err(Error::Shape("predictions and truths differ in length".into()));
    }
    if predictions.is_empty() {
        return Err(Error::invalid("no classified tracks to score"));
    }
    let hits = predictions
        .iter()
        .zip(truths)
        .filter(|(p, &t)| p.ranking.iter().take(k).any(|&c| c == t))
        .count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// One CSV row per track: id, truth, top-5 ranking, votes, unclassifiable flag.
pub fn predictions_csv(head: &ProbeHead, outcomes: &[(TrackOutcome, String)]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["track_id", "true_singer", "top5", "votes", "unclassifiable"])?;
    for (o, truth) in outcomes {
        match o {
            TrackOutcome::Classified(p) => {
                let top5: Vec<&str> = p.ranking.iter().take(5).map(|&c| head.classes[c].as_str()).collect();
                let votes: Vec<String> = p
                    .ranking
                    .iter()
                    .filter(|&&c| p.votes[c] > 0)
                    .map(|&c| format!("{}:{}", head.classes[c], p.votes[c]))
                    .collect();
                w.write_record([p.track_id.as_str(), truth, &top5.join(";"), &votes.join(";"), "false"])?;
            }
            TrackOutcome::Unclassifiable { track_id } => {
                w.write_record([track_id.as_str(), truth, "", "", "true"])?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

pub fn write_predictions_csv(path: &Path, head: &ProbeHead, outcomes: &[(TrackOutcome, String)]) -> Result<()> {
    write_atomic(path, predictions_csv(head, outcomes)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn onehot_rows(rows: &[(usize, f32)], n: usize) -> Vec<f32> {
        let mut out = vec![0.0; rows.len() * n];
        for (r, &(c, p)) in rows.iter().enumerate() {
            let rest = (1.0 - p) / (n - 1) as f32;
            for k in 0..n {
                out[r * n + k] = if k == c { p } else { rest };
            }
        }
        out
    }

    #[test]
    fn majority_vote() {
        let p = TrackPrediction::from_probabilities("t", &onehot_rows(&[(0, 0.9), (0, 0.8), (1, 0.9)], 3), 3).unwrap();
        assert_eq!(p.top1, 0);
        assert_eq!(p.votes, vec![2, 1, 0]);
    }

    #[test]
    fn tie_broken_by_probability_mass() {
        // One vote each; A's segment is more confident overall.
        let probs = [0.7, 0.3, 0.0, 0.4, 0.6, 0.0];
        let p = TrackPrediction::from_probabilities("t", &probs, 3).unwrap();
        assert_eq!(p.votes, vec![1, 1, 0]);
        assert!((p.prob_sums[0] - 1.1).abs() < 1e-6 && (p.prob_sums[1] - 0.9).abs() < 1e-6);
        assert_eq!(p.top1, 0);
        // Full tie falls back to the lowest index.
        let p = TrackPrediction::from_probabilities("t", &[0.5, 0.5, 0.5, 0.5], 2).unwrap();
        assert_eq!(p.top1, 0);
    }

    #[test]
    fn single_segment_and_permutation_invariance() {
        let rows = onehot_rows(&[(2, 0.6)], 4);
        assert_eq!(TrackPrediction::from_probabilities("t", &rows, 4).unwrap().top1, 2);
        let a = onehot_rows(&[(1, 0.5), (3, 0.9), (1, 0.7)], 4);
        let b = onehot_rows(&[(3, 0.9), (1, 0.7), (1, 0.5)], 4);
        let pa = TrackPrediction::from_probabilities("t", &a, 4).unwrap();
        let pb = TrackPrediction::from_probabilities("t", &b, 4).unwrap();
        assert_eq!(pa.ranking, pb.ranking);
    }

    #[test]
    fn topk_rules() {
        let mk = |ranking: Vec<usize>| TrackPrediction {
            track_id: "t".into(),
            votes: vec![0; 6],
            prob_sums: vec![0.0; 6],
            top1: ranking[0],
            ranking,
        };
        let preds = vec![mk(vec![0, 1, 2, 3, 4, 5]), mk(vec![1, 0, 2, 3, 4, 5])];
        assert_eq!(topk_accuracy(&preds, &[0, 1], 1).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&preds, &[0, 1], 5).unwrap(), 1.0);
        // Truth at rank 3 everywhere.
        assert_eq!(topk_accuracy(&preds, &[2, 2], 1).unwrap(), 0.0);
        assert_eq!(topk_accuracy(&preds, &[2, 2], 5).unwrap(), 1.0);
        assert_eq!(topk_accuracy(&preds, &[5, 5], 6).unwrap(), 1.0);
        assert!(topk_accuracy(&preds, &[0], 1).is_err());
        assert!(topk_accuracy(&preds, &[0, 1], 0).is_err());
    }

    #[test]
    fn cross_entropy_gradient() {
        let logits = [0.3f32, -0.2, 1.0, 0.5, 0.1, -0.4];
        let (l, g) = cross_entropy(&logits, &[2, 0], 3);
        assert!(l > 0.0);
        for (i, &gi) in g.iter().enumerate() {
            let mut a = logits;
            let mut b = logits;
            a[i] += 1e-3;
            b[i] -= 1e-3;
            let num = (cross_entropy(&a, &[2, 0], 3).0 - cross_entropy(&b, &[2, 0], 3).0) / 2e-3;
            assert!((num - gi as f64).abs() < 1e-3);
        }
    }
}
