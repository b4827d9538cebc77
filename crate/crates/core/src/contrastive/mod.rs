//! Singer-level contrastive pre-training: pair sampling for the three
//! regimes, the NT-Xent objective, the plateau schedule and the training loop.

pub mod loss;
pub mod plateau;
pub mod sampling;
pub mod train;

pub use loss::{nt_xent, nt_xent_with_grad, DEFAULT_TEMPERATURE};
pub use plateau::{plateau_step, PlateauAction, PlateauConfig, PlateauState};
pub use sampling::{sample_pair_batch, validation_pairs, ContrastivePool, PairBatch, PoolTrack, Regime, SegmentRef};
pub use train::{
    gather_patches, history_csv, load_encoder, pretrain, projector_dims, train_step, validation_loss,
    write_history_csv, ContrastiveModel, EpochRecord, PretrainConfig, PretrainOutcome, StopReason, TrainState,
    ITERS_PER_EPOCH,
};
