//! Contrastive pre-training loop: Adam on mean NT-Xent over sampled pair
//! batches, a fixed validation set scored every epoch, and the plateau
//! schedule deciding decay and stopping.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::loss::{nt_xent, nt_xent_with_grad, DEFAULT_TEMPERATURE};
use super::plateau::{plateau_step, PlateauAction, PlateauConfig, PlateauState};
use super::sampling::{sample_pair_batch, ContrastivePool, PairBatch, Regime, SegmentRef};
use crate::encoder::{patchify, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::features::MelSource;
use crate::manifest::write_atomic;
use crate::nn::{Adam, AdamConfig, BnMlp, Checkpoint};
use crate::rng::rng_for;

pub const ITERS_PER_EPOCH: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainConfig {
    pub regime: Regime,
    pub batch_pairs: usize,
    pub temperature: f64,
    pub lr: f64,
    #[serde(default)]
    pub adam: AdamConfig,
    pub iters_per_epoch: usize,
    pub max_val_iters: usize,
    pub max_epochs: usize,
    pub plateau: PlateauConfig,
    pub seed: u64,
}

impl PretrainConfig {
    /// Full-scale settings: 128 pairs, lr 1e-4, no epoch cap.
    pub fn paper(regime: Regime, seed: u64) -> Self {
        Self {
            regime,
            batch_pairs: 128,
            temperature: DEFAULT_TEMPERATURE,
            lr: 1e-4,
            adam: AdamConfig::default(),
            iters_per_epoch: ITERS_PER_EPOCH,
            max_val_iters: ITERS_PER_EPOCH,
            max_epochs: usize::MAX,
            plateau: PlateauConfig::contrastive(),
            seed,
        }
    }

    /// Desk-scale settings sized for a small catalog on one CPU.
    pub fn desk(regime: Regime, seed: u64) -> Self {
        Self {
            batch_pairs: 32,
            lr: 3e-4,
            max_epochs: 12,
            ..Self::paper(regime, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_pairs == 0 || self.iters_per_epoch == 0 || self.max_val_iters == 0 {
            return Err(Error::invalid("batch size and iteration counts must be positive"));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::invalid("temperature must be positive"));
        }
        self.plateau.validate()
    }
}

/// Projector widths for an embedding size: (E, E/2, E).
pub fn projector_dims(embed_dim: usize) -> [usize; 3] {
    [embed_dim, (embed_dim / 2).max(1), embed_dim]
}

#[derive(Debug, Clone)]
pub struct ContrastiveModel {
    pub encoder: Encoder,
    pub projector: BnMlp,
}

impl ContrastiveModel {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        let encoder = Encoder::new(cfg)?;
        let e = encoder.embed_dim();
        let projector = BnMlp::new(e, projector_dims(e))?;
        Ok(Self { encoder, projector })
    }
}

/// Everything needed to resume or audit a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub encoder: Vec<f32>,
    pub projector: Vec<f32>,
    pub projector_buffers: Vec<f32>,
    pub adam_encoder: Adam,
    pub adam_projector: Adam,
    pub plateau: PlateauState,
    pub epoch: usize,
}

impl TrainState {
    pub fn init(model: &ContrastiveModel, cfg: &PretrainConfig) -> Result<Self> {
        let encoder = model.encoder.init_params(cfg.seed);
        let projector = model
            .projector
            .init_params(&mut rng_for(cfg.seed, &["projector-init"]));
        Ok(Self {
            adam_encoder: Adam::new(encoder.len(), cfg.adam),
            adam_projector: Adam::new(projector.len(), cfg.adam),
            encoder,
            projector,
            projector_buffers: model.projector.init_buffers(),
            plateau: PlateauState::new(cfg.lr, cfg.plateau)?,
            epoch: 0,
        })
    }

    pub fn to_checkpoint(&self, model: &ContrastiveModel, meta: serde_json::Value) -> Result<Checkpoint> {
        let mut tensors = model.encoder.layout().export("encoder.", &self.encoder);
        tensors.extend(model.projector.layout().export("projector.", &self.projector));
        tensors.push(crate::nn::NamedTensor {
            name: "projector_buffers.running".into(),
            shape: vec![self.projector_buffers.len()],
            data: self.projector_buffers.clone(),
        });
        tensors.extend(self.adam_encoder.export("optimizer.encoder."));
        tensors.extend(self.adam_projector.export("optimizer.projector."));
        let meta = serde_json::json!({
            "encoder": model.encoder.config(),
            "projector_dims": model.projector.dims(),
            "epoch": self.epoch,
            "plateau": self.plateau,
            "adam": self.adam_encoder.config,
            "extra": meta,
        });
        Ok(Checkpoint { meta, tensors })
    }

    pub fn from_checkpoint(model: &ContrastiveModel, ckpt: &Checkpoint) -> Result<Self> {
        let enc_cfg: EncoderConfig = serde_json::from_value(ckpt.meta["encoder"].clone())?;
        if &enc_cfg != model.encoder.config() {
            return Err(Error::Shape("checkpoint encoder config differs from the model".into()));
        }
        let adam: AdamConfig = serde_json::from_value(ckpt.meta["adam"].clone())?;
        let encoder = model.encoder.layout().import("encoder.", ckpt)?;
        let projector = model.projector.layout().import("projector.", ckpt)?;
        let buffers = ckpt.get("projector_buffers.running")?.data.clone();
        if buffers.len() != model.projector.buffer_len() {
            return Err(Error::Shape("projector running statistics have the wrong size".into()));
        }
        Ok(Self {
            adam_encoder: Adam::import("optimizer.encoder.", encoder.len(), adam, ckpt)?,
            adam_projector: Adam::import("optimizer.projector.", projector.len(), adam, ckpt)?,
            encoder,
            projector,
            projector_buffers: buffers,
            plateau: serde_json::from_value(ckpt.meta["plateau"].clone())?,
            epoch: serde_json::from_value(ckpt.meta["epoch"].clone())?,
        })
    }
}

/// Reads only the encoder weights from a pre-training checkpoint.
pub fn load_encoder(ckpt: &Checkpoint) -> Result<(Encoder, Vec<f32>)> {
    let cfg: EncoderConfig = serde_json::from_value(ckpt.meta["encoder"].clone()).map_err(|e| Error::Format {
        what: "checkpoint",
        detail: format!("missing encoder config: {e}"),
    })?;
    let encoder = Encoder::new(cfg)?;
    let params = encoder.layout().import("encoder.", ckpt)?;
    Ok((encoder, params))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Plateau,
    MaxEpochs,
    /// A non-finite loss appeared in this epoch; the state is the last good one.
    Diverged { epoch: usize },
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub state: TrainState,
    pub history: Vec<EpochRecord>,
    pub initial_val_loss: f64,
    pub stop: StopReason,
}

/// Gathers and patchifies the mels of a list of segment references.
pub fn gather_patches(inputs: &[SegmentRef], mels: &dyn MelSource, cfg: &EncoderConfig) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(inputs.len() * 128 * 240);
    for s in inputs {
        out.extend(patchify(mels.mel(&s.track_id, s.kind, s.offset_s)?, cfg)?);
    }
    Ok(out)
}

/// Splits the validation pairs into at most `max_chunks` chunks of roughly
/// `batch_pairs` pairs, each holding at least two pairs.
fn validation_chunks(n_pairs: usize, batch_pairs: usize, max_chunks: usize) -> Vec<std::ops::Range<usize>> {
    let chunks = n_pairs.div_ceil(batch_pairs.max(2)).min(max_chunks).min(n_pairs / 2).max(1);
    let base = n_pairs / chunks;
    let extra = n_pairs % chunks;
    let mut start = 0;
    (0..chunks)
        .map(|c| {
            let len = base + usize::from(c < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Mean NT-Xent of the fixed validation pairs, models in inference mode.
pub fn validation_loss(
    model: &ContrastiveModel,
    state: &TrainState,
    val: &PairBatch,
    mels: &dyn MelSource,
    cfg: &PretrainConfig,
) -> Result<f64> {
    let mut total = 0.0;
    let chunks = validation_chunks(val.pairs(), cfg.batch_pairs, cfg.max_val_iters);
    for r in &chunks {
        let inputs = &val.inputs[2 * r.start..2 * r.end];
        let patches = gather_patches(inputs, mels, model.encoder.config())?;
        let emb = model.encoder.embed(&state.encoder, &patches, inputs.len())?;
        let proj = model
            .projector
            .forward_eval(&state.projector, &state.projector_buffers, &emb, inputs.len())?;
        total += nt_xent(&proj, model.projector.output_dim(), cfg.temperature)?;
    }
    Ok(total / chunks.len() as f64)
}

/// One optimization step; returns the batch loss.
pub fn train_step(
    model: &ContrastiveModel,
    state: &mut TrainState,
    batch: &PairBatch,
    mels: &dyn MelSource,
    cfg: &PretrainConfig,
    dropout_rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<f64> {
    let n = batch.inputs.len();
    let patches = gather_patches(&batch.inputs, mels, model.encoder.config())?;
    let (emb, enc_cache) = model.encoder.forward_train(&state.encoder, &patches, n, dropout_rng)?;
    let (proj, proj_cache) =
        model
            .projector
            .forward_train(&state.projector, Some(&mut state.projector_buffers), &emb, n)?;
    let (loss, d_proj) = match nt_xent_with_grad(&proj, model.projector.output_dim(), cfg.temperature) {
        Ok(v) => v,
        Err(Error::ZeroNorm(_)) | Err(Error::NonFinite(_)) => return Ok(f64::NAN),
        Err(e) => return Err(e),
    };
    if !loss.is_finite() {
        return Ok(loss);
    }
    let mut g_proj = vec![0.0f32; state.projector.len()];
    let d_emb = model.projector.backward(&state.projector, &proj_cache, &d_proj, &mut g_proj);
    let mut g_enc = vec![0.0f32; state.encoder.len()];
    model.encoder.backward(&state.encoder, &enc_cache, &d_emb, &mut g_enc)?;
    if g_enc.iter().chain(&g_proj).any(|g| !g.is_finite()) {
        return Ok(f64::NAN);
    }
    let lr = state.plateau.lr;
    state.adam_encoder.step(&mut state.encoder, &g_enc, lr);
    state.adam_projector.step(&mut state.projector, &g_proj, lr);
    Ok(loss)
}

/// Runs pre-training from `state` until the plateau rule stops it, the epoch
/// cap is reached, or a loss diverges.
pub fn pretrain(
    model: &ContrastiveModel,
    mut state: TrainState,
    pool: &ContrastivePool,
    val: &PairBatch,
    mels: &dyn MelSource,
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    let mut batch_rng = rng_for(cfg.seed, &["pretrain-batches", cfg.regime.as_str()]);
    let mut dropout_rng = rng_for(cfg.seed, &["pretrain-dropout", cfg.regime.as_str()]);
    let initial_val_loss = validation_loss(model, &state, val, mels, cfg)?;
    log::info!("{} pre-training: untrained validation loss {initial_val_loss:.4}", cfg.regime);
    let mut history = Vec::new();
    let mut stop = StopReason::MaxEpochs;
    while state.epoch < cfg.max_epochs {
        let good = state.clone();
        let epoch = state.epoch + 1;
        let lr = state.plateau.lr;
        let mut sum = 0.0;
        let mut diverged = false;
        for _ in 0..cfg.iters_per_epoch {
            let batch = sample_pair_batch(pool, cfg.regime, cfg.batch_pairs, &mut batch_rng)?;
            let loss = train_step(model, &mut state, &batch, mels, cfg, &mut dropout_rng)?;
            if !loss.is_finite() {
                diverged = true;
                break;
            }
            sum += loss;
        }
        let val_loss = if diverged {
            f64::NAN
        } else {
            validation_loss(model, &state, val, mels, cfg)?
        };
        if diverged || !val_loss.is_finite() {
            log::warn!("non-finite loss in epoch {epoch}; restoring epoch {}", good.epoch);
            state = good;
            stop = StopReason::Diverged { epoch };
            break;
        }
        let record = EpochRecord {
            epoch,
            train_loss: sum / cfg.iters_per_epoch as f64,
            val_loss,
            lr,
        };
        log::info!(
            "{} epoch {epoch}: train {:.4} val {:.4} lr {:.2e}",
            cfg.regime,
            record.train_loss,
            record.val_loss,
            lr
        );
        history.push(record);
        let (plateau, action) = plateau_step(&state.plateau, val_loss)?;
        state.plateau = plateau;
        state.epoch = epoch;
        if action == PlateauAction::Stop {
            stop = StopReason::Plateau;
            break;
        }
    }
    Ok(PretrainOutcome {
        state,
        history,
        initial_val_loss,
        stop,
    })
}

/// Loss history as CSV: epoch, train_loss, val_loss, lr.
pub fn history_csv(history: &[EpochRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in history {
        w.serialize(r)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    write_atomic(path, history_csv(history)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validation_chunking() {
        assert_eq!(validation_chunks(16, 32, 32), vec![0..16]);
        assert_eq!(validation_chunks(4096, 128, 32).len(), 32);
        let c = validation_chunks(70, 32, 32);
        assert_eq!(c.len(), 3);
        assert_eq!(c.iter().map(|r| r.len()).sum::<usize>(), 70);
        assert!(validation_chunks(5, 2, 32).iter().all(|r| r.len() >= 2));
    }

    #[test]
    fn history_csv_has_header() {
        let h = [EpochRecord { epoch: 1, train_loss: 2.0, val_loss: 1.5, lr: 1e-4 }];
        let text = history_csv(&h).unwrap();
        assert!(text.starts_with("epoch,train_loss,val_loss,lr\n1,2.0,1.5,0.0001"));
    }
}
