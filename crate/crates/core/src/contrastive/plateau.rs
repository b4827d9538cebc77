//! Validation-loss plateau schedule: decays the learning rate at every
//! multiple of `patience_decay` non-improving epochs and stops after
//! `patience_stop`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_MIN_DELTA: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateauConfig {
    pub decay_factor: f64,
    pub patience_decay: usize,
    pub patience_stop: usize,
    #[serde(default = "default_min_delta")]
    pub min_delta: f64,
}

fn default_min_delta() -> f64 {
    DEFAULT_MIN_DELTA
}

impl PlateauConfig {
    /// Contrastive pre-training: halve every 25 plateau epochs, stop at 100.
    pub fn contrastive() -> Self {
        Self {
            decay_factor: 0.5,
            patience_decay: 25,
            patience_stop: 100,
            min_delta: DEFAULT_MIN_DELTA,
        }
    }

    /// Probe training: ×0.1 every 10 plateau epochs, stop at 20.
    pub fn probe() -> Self {
        Self {
            decay_factor: 0.1,
            patience_decay: 10,
            patience_stop: 20,
            min_delta: DEFAULT_MIN_DELTA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0)
            || self.patience_decay == 0
            || self.patience_stop == 0
            || !(self.min_delta >= 0.0)
        {
            return Err(Error::invalid(format!("invalid plateau schedule {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauState {
    pub best_val: f64,
    pub epochs_since_best: usize,
    pub lr: f64,
    pub config: PlateauConfig,
}

impl PlateauState {
    pub fn new(lr: f64, config: PlateauConfig) -> Result<Self> {
        config.validate()?;
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::invalid(format!("learning rate {lr} must be positive")));
        }
        Ok(Self {
            best_val: f64::INFINITY,
            epochs_since_best: 0,
            lr,
            config,
        })
    }
}

/// What the schedule did this epoch. `Stop` may coincide with a decay (when
/// `patience_stop` is a multiple of `patience_decay`); the returned state
/// then carries the decayed rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlateauAction {
    Continue,
    Decay,
    Stop,
}

pub fn plateau_step(state: &PlateauState, val_loss: f64) -> Result<(PlateauState, PlateauAction)> {
    if !val_loss.is_finite() {
        return Err(Error::NonFinite("validation loss"));
    }
    let mut next = *state;
    let cfg = state.config;
    if val_loss < state.best_val - cfg.min_delta {
        next.best_val = val_loss;
        next.epochs_since_best = 0;
        return Ok((next, PlateauAction::Continue));
    }
    next.epochs_since_best += 1;
    let decay = next.epochs_since_best % cfg.patience_decay == 0;
    if decay {
        next.lr *= cfg.decay_factor;
    }
    let action = if next.epochs_since_best >= cfg.patience_stop {
        PlateauAction::Stop
    } else if decay {
        PlateauAction::Decay
    } else {
        PlateauAction::Continue
    };
    Ok((next, action))
}
