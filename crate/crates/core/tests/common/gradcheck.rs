//! Central finite differences through encoder → projector → NT-Xent, in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use singerlab::contrastive::{nt_xent, nt_xent_with_grad, projector_dims};
use singerlab::encoder::{Encoder, EncoderConfig};
use singerlab::nn::BnMlp;

pub const STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-3;
/// Biases feeding straight into a normalization have an exactly-zero true
/// gradient; both sides are then rounding noise (~1e-11 for the numeric one),
/// so norms are floored here instead of dividing noise by noise.
pub const ZERO_GRADIENT: f64 = 1e-6;

pub fn tiny_config() -> EncoderConfig {
    EncoderConfig {
        width: 16,
        depth: 1,
        heads: 2,
        mlp_ratio: 2,
        embed_dim: 8,
        dropout: 0.0,
        ..EncoderConfig::desk()
    }
}

/// Per-tensor relative error ‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖, ZERO_GRADIENT).
#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub rel_err: f64,
}

struct Problem {
    encoder: Encoder,
    projector: BnMlp,
    patches: Vec<f64>,
    batch: usize,
    temperature: f64,
}

impl Problem {
    fn loss(&self, enc: &[f64], proj: &[f64]) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (emb, _) = self.encoder.forward_train(enc, &self.patches, self.batch, &mut rng).unwrap();
        let (z, _) = self.projector.forward_train(proj, None, &emb, self.batch).unwrap();
        nt_xent(&z, self.projector.output_dim(), self.temperature).unwrap()
    }

    fn grads(&self, enc: &[f64], proj: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (emb, enc_cache) = self.encoder.forward_train(enc, &self.patches, self.batch, &mut rng).unwrap();
        let (z, proj_cache) = self.projector.forward_train(proj, None, &emb, self.batch).unwrap();
        let (_, dz) = nt_xent_with_grad(&z, self.projector.output_dim(), self.temperature).unwrap();
        let mut g_proj = vec![0.0; proj.len()];
        let d_emb = self.projector.backward(proj, &proj_cache, &dz, &mut g_proj);
        let mut g_enc = vec![0.0; enc.len()];
        self.encoder.backward(enc, &enc_cache, &d_emb, &mut g_enc).unwrap();
        (g_enc, g_proj)
    }
}

/// Checks up to `per_tensor` coordinates of every parameter tensor (all of
/// them when the tensor is smaller). Two positive pairs.
pub fn run(per_tensor: usize, seed: u64) -> Vec<TensorCheck> {
    let cfg = tiny_config();
    let encoder = Encoder::new(cfg.clone()).unwrap();
    let projector = BnMlp::new(cfg.embed_dim, projector_dims(cfg.embed_dim)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let batch = 4;
    let patches: Vec<f64> = (0..batch * cfg.n_patches() * cfg.patch_len())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    // Larger-than-default weights keep every path's gradient well above
    // the finite-difference noise floor.
    let mut enc: Vec<f64> = encoder.init_params(seed);
    for v in enc.iter_mut() {
        *v = *v * 10.0 + rng.random_range(-0.05..0.05);
    }
    let mut proj: Vec<f64> = projector.init_params(&mut rng);
    for v in proj.iter_mut() {
        *v = *v * 10.0 + rng.random_range(-0.05..0.05);
    }
    let problem = Problem {
        encoder,
        projector,
        patches,
        batch,
        temperature: 0.2,
    };
    let (g_enc, g_proj) = problem.grads(&enc, &proj);

    let mut out = Vec::new();
    let enc_specs: Vec<_> = problem
        .encoder
        .layout()
        .specs()
        .iter()
        .map(|s| (format!("encoder.{}", s.name), s.range()))
        .collect();
    let proj_specs: Vec<_> = problem
        .projector
        .layout()
        .specs()
        .iter()
        .map(|s| (format!("projector.{}", s.name), s.range()))
        .collect();
    for (which, specs) in [(0, enc_specs), (1, proj_specs)] {
        for (name, range) in specs {
            let len = range.len();
            let picks: Vec<usize> = if len <= per_tensor {
                range.clone().collect()
            } else {
                (0..per_tensor).map(|_| range.start + rng.random_range(0..len)).collect()
            };
            let (mut diff, mut na, mut nn) = (0.0, 0.0, 0.0);
            for &i in &picks {
                let numeric = {
                    let (mut e, mut p) = (enc.clone(), proj.clone());
                    let slot = if which == 0 { &mut e[i] } else { &mut p[i] };
                    *slot += STEP;
                    let up = problem.loss(&e, &p);
                    let slot = if which == 0 { &mut e[i] } else { &mut p[i] };
                    *slot -= 2.0 * STEP;
                    let down = problem.loss(&e, &p);
                    (up - down) / (2.0 * STEP)
                };
                let analytic = if which == 0 { g_enc[i] } else { g_proj[i] };
                diff += (analytic - numeric).powi(2);
                na += analytic * analytic;
                nn += numeric * numeric;
            }
            let scale = na.sqrt().max(nn.sqrt()).max(ZERO_GRADIENT);
            let rel_err = diff.sqrt() / scale;
            out.push(TensorCheck {
                name,
                checked: picks.len(),
                rel_err,
            });
        }
    }
    out
}
