//! Adam optimizer over a flat parameter vector.

use serde::{Deserialize, Serialize};

use super::params::{Checkpoint, NamedTensor};
use super::real::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        Self {
            config,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step<T: Real>(&mut self, params: &mut [T], grads: &[T], lr: f64) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i].to_f64_lossy();
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            let p = params[i].to_f64_lossy() - lr * mhat / (vhat.sqrt() + eps);
            params[i] = T::from_f64_lossy(p);
        }
    }

    pub fn export(&self, prefix: &str) -> Vec<NamedTensor> {
        let n = self.m.len();
        vec![
            NamedTensor {
                name: format!("{prefix}m"),
                shape: vec![n],
                data: self.m.iter().map(|&v| v as f32).collect(),
            },
            NamedTensor {
                name: format!("{prefix}v"),
                shape: vec![n],
                data: self.v.iter().map(|&v| v as f32).collect(),
            },
            NamedTensor {
                name: format!("{prefix}t"),
                shape: vec![2],
                // Step count split across two f32 words to stay exact.
                data: vec![(self.t >> 24) as f32, (self.t & 0xff_ffff) as f32],
            },
        ]
    }

    pub fn import(prefix: &str, n: usize, config: AdamConfig, ckpt: &Checkpoint) -> Result<Self> {
        let m = ckpt.get(&format!("{prefix}m"))?;
        let v = ckpt.get(&format!("{prefix}v"))?;
        let t = ckpt.get(&format!("{prefix}t"))?;
        if m.data.len() != n || v.data.len() != n || t.data.len() != 2 {
            return Err(Error::Shape(format!("optimizer state `{prefix}` does not match {n} parameters")));
        }
        Ok(Self {
            config,
            m: m.data.iter().map(|&x| x as f64).collect(),
            v: v.data.iter().map(|&x| x as f64).collect(),
            t: ((t.data[0] as u64) << 24) | t.data[1] as u64,
        })
    }
}
