//! Three-layer MLP with batch normalization and ReLU after the first two
//! layers. Serves as the contrastive projector and as the probe head.

use rand::Rng;

use super::ops::{batchnorm_eval_fwd, batchnorm_train_bwd, batchnorm_train_fwd, linear_bwd, linear_fwd};
use super::params::{Init, ParamLayout, INIT_STD};
use super::real::Real;
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, Copy)]
struct Layer {
    w: usize,
    b: usize,
    din: usize,
    dout: usize,
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    g: usize,
    b: usize,
}

#[derive(Debug, Clone)]
pub struct BnMlp {
    input: usize,
    dims: [usize; 3],
    layout: ParamLayout,
    layers: [Layer; 3],
    norms: [Norm; 2],
}

/// Activations kept from a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct BnMlpCache<T> {
    rows: usize,
    x: Vec<T>,
    xhat: [Vec<T>; 2],
    rstd: [Vec<T>; 2],
    act: [Vec<T>; 2],
}

impl BnMlp {
    pub fn new(input: usize, dims: [usize; 3]) -> Result<Self> {
        if input == 0 || dims.contains(&0) {
            return Err(Error::invalid("MLP dimensions must be positive"));
        }
        let mut layout = ParamLayout::new();
        let mut layers = Vec::new();
        let mut norms = Vec::new();
        let mut din = input;
        for (i, &dout) in dims.iter().enumerate() {
            let w = layout.add(format!("fc{}.weight", i + 1), &[din, dout], Init::TruncNormal(INIT_STD));
            let b = layout.add(format!("fc{}.bias", i + 1), &[dout], Init::Zeros);
            layers.push(Layer { w, b, din, dout });
            if i < 2 {
                let g = layout.add(format!("bn{}.weight", i + 1), &[dout], Init::Ones);
                let b = layout.add(format!("bn{}.bias", i + 1), &[dout], Init::Zeros);
                norms.push(Norm { g, b });
            }
            din = dout;
        }
        Ok(Self {
            input,
            dims,
            layout,
            layers: [layers[0], layers[1], layers[2]],
            norms: [norms[0], norms[1]],
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn output_dim(&self) -> usize {
        self.dims[2]
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.len()
    }

    pub fn init_params<T: Real, R: Rng>(&self, rng: &mut R) -> Vec<T> {
        self.layout.init(rng)
    }

    /// Running statistics `[mean1, var1, mean2, var2]`, initialized to (0, 1).
    pub fn init_buffers<T: Real>(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(2 * (self.dims[0] + self.dims[1]));
        for &d in &self.dims[..2] {
            out.extend(std::iter::repeat_n(T::zero(), d));
            out.extend(std::iter::repeat_n(T::one(), d));
        }
        out
    }

    pub fn buffer_len(&self) -> usize {
        2 * (self.dims[0] + self.dims[1])
    }

    fn buffer_slices<'a, T>(&self, buf: &'a [T], i: usize) -> (&'a [T], &'a [T]) {
        let d0 = self.dims[0];
        let base = if i == 0 { 0 } else { 2 * d0 };
        let d = self.dims[i];
        (&buf[base..base + d], &buf[base + d..base + 2 * d])
    }

    fn check(&self, params_len: usize, x_len: usize, rows: usize) -> Result<()> {
        if params_len != self.layout.len() {
            return Err(Error::Shape(format!(
                "MLP expects {} parameters, got {params_len}",
                self.layout.len()
            )));
        }
        if x_len != rows * self.input {
            return Err(Error::Shape(format!("MLP input has {x_len} values, expected {rows}×{}", self.input)));
        }
        Ok(())
    }

    /// Inference mode: normalization uses the running statistics.
    pub fn forward_eval<T: Real>(&self, params: &[T], buffers: &[T], x: &[T], rows: usize) -> Result<Vec<T>> {
        self.check(params.len(), x.len(), rows)?;
        let mut h = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = vec![T::zero(); rows * l.dout];
            linear_fwd(&h, rows, l.din, &params[l.w..l.w + l.din * l.dout], &params[l.b..l.b + l.dout], l.dout, &mut y);
            if i < 2 {
                let n = self.norms[i];
                let (mean, var) = self.buffer_slices(buffers, i);
                let mut z = vec![T::zero(); y.len()];
                batchnorm_eval_fwd(&y, l.dout, &params[n.g..n.g + l.dout], &params[n.b..n.b + l.dout], mean, var, &mut z);
                for v in &mut z {
                    *v = v.max(T::zero());
                }
                y = z;
            }
            h = y;
        }
        Ok(h)
    }

    /// Training mode: batch statistics; running statistics are updated when
    /// `buffers` is given.
    pub fn forward_train<T: Real>(
        &self,
        params: &[T],
        mut buffers: Option<&mut [T]>,
        x: &[T],
        rows: usize,
    ) -> Result<(Vec<T>, BnMlpCache<T>)> {
        self.check(params.len(), x.len(), rows)?;
        if rows < 2 {
            return Err(Error::invalid("batch normalization needs at least two rows"));
        }
        let mut xhat: [Vec<T>; 2] = Default::default();
        let mut rstd: [Vec<T>; 2] = Default::default();
        let mut act: [Vec<T>; 2] = Default::default();
        let mut h = x.to_vec();
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = vec![T::zero(); rows * l.dout];
            linear_fwd(&h, rows, l.din, &params[l.w..l.w + l.din * l.dout], &params[l.b..l.b + l.dout], l.dout, &mut y);
            if i < 2 {
                let n = self.norms[i];
                let d = l.dout;
                let mut z = vec![T::zero(); y.len()];
                let mut xh = vec![T::zero(); y.len()];
                let mut rs = vec![T::zero(); d];
                let mut bm = vec![T::zero(); d];
                let mut bv = vec![T::zero(); d];
                batchnorm_train_fwd(
                    &y,
                    rows,
                    d,
                    &params[n.g..n.g + d],
                    &params[n.b..n.b + d],
                    &mut z,
                    &mut xh,
                    &mut rs,
                    &mut bm,
                    &mut bv,
                );
                if let Some(buf) = buffers.as_deref_mut() {
                    let base = if i == 0 { 0 } else { 2 * self.dims[0] };
                    let mom = T::from_f64_lossy(BN_MOMENTUM);
                    let unbias = T::from_f64_lossy(rows as f64 / (rows - 1) as f64);
                    for k in 0..d {
                        buf[base + k] = (T::one() - mom) * buf[base + k] + mom * bm[k];
                        buf[base + d + k] = (T::one() - mom) * buf[base + d + k] + mom * bv[k] * unbias;
                    }
                }
                for v in &mut z {
                    *v = v.max(T::zero());
                }
                xhat[i] = xh;
                rstd[i] = rs;
                act[i] = z.clone();
                y = z;
            }
            h = y;
        }
        Ok((
            h,
            BnMlpCache {
                rows,
                x: x.to_vec(),
                xhat,
                rstd,
                act,
            },
        ))
    }

    /// Accumulates parameter gradients into `grads`; returns the input gradient.
    pub fn backward<T: Real>(&self, params: &[T], cache: &BnMlpCache<T>, dy: &[T], grads: &mut [T]) -> Vec<T> {
        let rows = cache.rows;
        let mut d = dy.to_vec();
        for i in (0..3).rev() {
            let l = self.layers[i];
            if i < 2 {
                // ReLU then batch-norm backward.
                for (g, &a) in d.iter_mut().zip(&cache.act[i]) {
                    if a <= T::zero() {
                        *g = T::zero();
                    }
                }
                let n = self.norms[i];
                let mut dx = vec![T::zero(); d.len()];
                let (head, tail) = grads.split_at_mut(n.b);
                batchnorm_train_bwd(
                    &cache.xhat[i],
                    rows,
                    l.dout,
                    &params[n.g..n.g + l.dout],
                    &cache.rstd[i],
                    &d,
                    &mut dx,
                    &mut head[n.g..n.g + l.dout],
                    &mut tail[..l.dout],
                );
                d = dx;
            }
            let input = if i == 0 { &cache.x } else { &cache.act[i - 1] };
            let mut dx = vec![T::zero(); rows * l.din];
            let (head, tail) = grads.split_at_mut(l.b);
            linear_bwd(
                input,
                rows,
                l.din,
                &params[l.w..l.w + l.din * l.dout],
                l.dout,
                &d,
                Some(&mut dx),
                &mut head[l.w..l.w + l.din * l.dout],
                &mut tail[..l.dout],
            );
            d = dx;
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn zero_input_eval_gives_zero_output() {
        let mlp = BnMlp::new(8, [8, 4, 8]).unwrap();
        let p: Vec<f64> = mlp.init_params(&mut rng_for(3, &["mlp"]));
        let buf = mlp.init_buffers::<f64>();
        let y = mlp.forward_eval(&p, &buf, &[0.0; 16], 2).unwrap();
        assert_eq!(y.len(), 16);
        assert!(y.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn running_stats_move_toward_batch_stats() {
        let mlp = BnMlp::new(2, [2, 2, 2]).unwrap();
        let p: Vec<f64> = mlp.init_params(&mut rng_for(3, &["mlp"]));
        let mut buf = mlp.init_buffers::<f64>();
        let x = [1.0, 2.0, 3.0, -1.0, 0.5, 0.0];
        mlp.forward_train(&p, Some(&mut buf), &x, 3).unwrap();
        assert_ne!(buf, mlp.init_buffers::<f64>());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mlp = BnMlp::new(5, [6, 3, 4]).unwrap();
        let mut rng = rng_for(9, &["mlp"]);
        let mut p: Vec<f64> = mlp.init_params(&mut rng);
        // Larger weights than the init so ReLU boundaries are well away.
        for v in p.iter_mut() {
            *v *= 20.0;
        }
        let rows = 6;
        let x: Vec<f64> = (0..rows * 5).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
        let up: Vec<f64> = (0..rows * 4).map(|i| ((i * 13 % 7) as f64 - 3.0) / 2.0).collect();
        let loss = |p: &[f64]| {
            let (y, _) = mlp.forward_train(p, None, &x, rows).unwrap();
            y.iter().zip(&up).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, cache) = mlp.forward_train(&p, None, &x, rows).unwrap();
        let mut g = vec![0.0; p.len()];
        mlp.backward(&p, &cache, &up, &mut g);
        for i in 0..p.len() {
            let mut a = p.clone();
            let mut b = p.clone();
            a[i] += 1e-5;
            b[i] -= 1e-5;
            let num = (loss(&a) - loss(&b)) / 2e-5;
            assert!((num - g[i]).abs() <= 1e-5 * (1.0 + num.abs()), "param {i}: {num} vs {}", g[i]);
        }
    }
}
