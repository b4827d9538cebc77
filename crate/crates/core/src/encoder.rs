//! Patch transformer mapping a 128×240 log-mel segment to a fixed-size
//! embedding: linear patch projection with learned positions, pre-norm
//! transformer blocks, final norm, mean-pool over tokens, linear readout.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{N_FRAMES, N_MELS};
use crate::error::{Error, Result};
use crate::nn::ops::{
    attention_bwd, attention_fwd, gelu, gelu_grad, layernorm_bwd, layernorm_fwd, linear_bwd, linear_fwd,
};
use crate::nn::{Init, ParamLayout, Real, INIT_STD};
use crate::rng::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Desk,
    Paper,
}

impl Preset {
    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Desk => "desk",
            Preset::Paper => "paper",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::invalid(format!("unknown preset `{other}` (expected desk or paper)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub patch_h: usize,
    pub patch_w: usize,
    pub width: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub embed_dim: usize,
    #[serde(default)]
    pub dropout: f64,
}

impl EncoderConfig {
    pub fn desk() -> Self {
        Self {
            patch_h: 16,
            patch_w: 16,
            width: 96,
            depth: 4,
            heads: 4,
            mlp_ratio: 4,
            embed_dim: 128,
            dropout: 0.0,
        }
    }

    /// Width/depth/heads of the "small" transformer family, 2048-dim output.
    pub fn paper() -> Self {
        Self {
            width: 384,
            depth: 12,
            heads: 6,
            embed_dim: 2048,
            ..Self::desk()
        }
    }

    pub fn preset(p: Preset) -> Self {
        match p {
            Preset::Desk => Self::desk(),
            Preset::Paper => Self::paper(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_h == 0 || self.patch_w == 0 || N_MELS % self.patch_h != 0 || N_FRAMES % self.patch_w != 0 {
            return Err(Error::invalid(format!(
                "patch {}×{} does not tile a {N_MELS}×{N_FRAMES} mel",
                self.patch_h, self.patch_w
            )));
        }
        if self.width == 0 || self.heads == 0 || self.width % self.heads != 0 {
            return Err(Error::invalid(format!(
                "width {} is not divisible by {} heads",
                self.width, self.heads
            )));
        }
        if self.depth == 0 || self.embed_dim == 0 || self.mlp_ratio == 0 {
            return Err(Error::invalid("depth, embed_dim and mlp_ratio must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn n_patches(&self) -> usize {
        (N_MELS / self.patch_h) * (N_FRAMES / self.patch_w)
    }

    pub fn patch_len(&self) -> usize {
        self.patch_h * self.patch_w
    }
}

/// Splits a row-major 128×240 mel into non-overlapping patches, ordered
/// row-major over the patch grid, each flattened row-major.
pub fn patchify<T: Copy>(mel: &[T], cfg: &EncoderConfig) -> Result<Vec<T>> {
    if mel.len() != N_MELS * N_FRAMES {
        return Err(Error::Shape(format!("mel has {} values, expected {}", mel.len(), N_MELS * N_FRAMES)));
    }
    let (ph, pw) = (cfg.patch_h, cfg.patch_w);
    let mut out = Vec::with_capacity(mel.len());
    for gi in 0..N_MELS / ph {
        for gj in 0..N_FRAMES / pw {
            for r in 0..ph {
                let row = (gi * ph + r) * N_FRAMES + gj * pw;
                out.extend_from_slice(&mel[row..row + pw]);
            }
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`].
pub fn unpatchify<T: Copy + Default>(patches: &[T], cfg: &EncoderConfig) -> Result<Vec<T>> {
    if patches.len() != N_MELS * N_FRAMES {
        return Err(Error::Shape(format!("patches hold {} values", patches.len())));
    }
    let (ph, pw) = (cfg.patch_h, cfg.patch_w);
    let mut out = vec![T::default(); patches.len()];
    let mut k = 0;
    for gi in 0..N_MELS / ph {
        for gj in 0..N_FRAMES / pw {
            for r in 0..ph {
                let row = (gi * ph + r) * N_FRAMES + gj * pw;
                out[row..row + pw].copy_from_slice(&patches[k..k + pw]);
                k += pw;
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
struct Lin {
    w: usize,
    b: usize,
    din: usize,
    dout: usize,
}

impl Lin {
    fn add(layout: &mut ParamLayout, name: &str, din: usize, dout: usize) -> Self {
        let w = layout.add(format!("{name}.weight"), &[din, dout], Init::TruncNormal(INIT_STD));
        let b = layout.add(format!("{name}.bias"), &[dout], Init::Zeros);
        Self { w, b, din, dout }
    }

    fn fwd<T: Real>(&self, p: &[T], x: &[T], rows: usize, y: &mut [T]) {
        linear_fwd(x, rows, self.din, self.wt(p), &p[self.b..self.b + self.dout], self.dout, y);
    }

    fn bwd<T: Real>(&self, p: &[T], x: &[T], rows: usize, dy: &[T], dx: Option<&mut [T]>, g: &mut [T]) {
        let (head, tail) = g.split_at_mut(self.b);
        linear_bwd(
            x,
            rows,
            self.din,
            self.wt(p),
            self.dout,
            dy,
            dx,
            &mut head[self.w..self.w + self.din * self.dout],
            &mut tail[..self.dout],
        );
    }

    fn wt<'a, T>(&self, p: &'a [T]) -> &'a [T] {
        &p[self.w..self.w + self.din * self.dout]
    }
}

#[derive(Debug, Clone, Copy)]
struct Norm {
    g: usize,
    b: usize,
    dim: usize,
}

impl Norm {
    fn add(layout: &mut ParamLayout, name: &str, dim: usize) -> Self {
        let g = layout.add(format!("{name}.weight"), &[dim], Init::Ones);
        let b = layout.add(format!("{name}.bias"), &[dim], Init::Zeros);
        Self { g, b, dim }
    }

    fn fwd<T: Real>(&self, p: &[T], x: &[T], y: &mut [T], stats: &mut [(T, T)]) {
        layernorm_fwd(x, self.dim, &p[self.g..self.g + self.dim], &p[self.b..self.b + self.dim], y, stats);
    }

    fn bwd<T: Real>(&self, p: &[T], x: &[T], stats: &[(T, T)], dy: &[T], dx: &mut [T], g: &mut [T]) {
        let (head, tail) = g.split_at_mut(self.b);
        layernorm_bwd(
            x,
            self.dim,
            &p[self.g..self.g + self.dim],
            stats,
            dy,
            dx,
            &mut head[self.g..self.g + self.dim],
            &mut tail[..self.dim],
        );
    }
}

#[derive(Debug, Clone, Copy)]
struct Block {
    ln1: Norm,
    qkv: Lin,
    proj: Lin,
    ln2: Norm,
    fc1: Lin,
    fc2: Lin,
}

#[derive(Debug, Clone)]
pub struct Encoder {
    cfg: EncoderConfig,
    layout: ParamLayout,
    patch: Lin,
    pos: usize,
    blocks: Vec<Block>,
    ln_f: Norm,
    head: Lin,
}

struct BlockCache<T> {
    x_in: Vec<T>,
    ln1: Vec<T>,
    st1: Vec<(T, T)>,
    qkv: Vec<T>,
    probs: Vec<T>,
    attn: Vec<T>,
    drop1: Vec<T>,
    x_mid: Vec<T>,
    ln2: Vec<T>,
    st2: Vec<(T, T)>,
    hidden: Vec<T>,
    act: Vec<T>,
    drop2: Vec<T>,
}

/// Activations of a training-mode forward pass.
pub struct EncoderCache<T> {
    batch: usize,
    patches: Vec<T>,
    blocks: Vec<BlockCache<T>>,
    x_out: Vec<T>,
    st_f: Vec<(T, T)>,
    pooled: Vec<T>,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let w = cfg.width;
        let n = cfg.n_patches();
        let mut layout = ParamLayout::new();
        let patch = Lin::add(&mut layout, "patch_embed", cfg.patch_len(), w);
        let pos = layout.add("pos_embed", &[n, w], Init::TruncNormal(INIT_STD));
        let blocks = (0..cfg.depth)
            .map(|i| {
                let p = format!("blocks.{i}");
                Block {
                    ln1: Norm::add(&mut layout, &format!("{p}.norm1"), w),
                    qkv: Lin::add(&mut layout, &format!("{p}.attn.qkv"), w, 3 * w),
                    proj: Lin::add(&mut layout, &format!("{p}.attn.proj"), w, w),
                    ln2: Norm::add(&mut layout, &format!("{p}.norm2"), w),
                    fc1: Lin::add(&mut layout, &format!("{p}.mlp.fc1"), w, cfg.mlp_ratio * w),
                    fc2: Lin::add(&mut layout, &format!("{p}.mlp.fc2"), cfg.mlp_ratio * w, w),
                }
            })
            .collect();
        let ln_f = Norm::add(&mut layout, "norm", w);
        let head = Lin::add(&mut layout, "head", w, cfg.embed_dim);
        Ok(Self {
            cfg,
            layout,
            patch,
            pos,
            blocks,
            ln_f,
            head,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn param_count(&self) -> usize {
        self.layout.len()
    }

    pub fn embed_dim(&self) -> usize {
        self.cfg.embed_dim
    }

    /// Deterministic initialization from a seed.
    pub fn init_params<T: Real>(&self, seed: u64) -> Vec<T> {
        self.layout.init(&mut rng_for(seed, &["encoder-init"]))
    }

    fn check_params(&self, len: usize) -> Result<()> {
        if len != self.layout.len() {
            return Err(Error::Shape(format!(
                "encoder expects {} parameters, got {len}",
                self.layout.len()
            )));
        }
        Ok(())
    }

    /// Segments per inference chunk, bounding activation memory to roughly
    /// 64M values.
    fn chunk_size(&self) -> usize {
        let n = self.cfg.n_patches();
        let w = self.cfg.width;
        let per_block = n * w * (6 + 3 + 2 * self.cfg.mlp_ratio) + self.cfg.heads * n * n;
        (64_000_000 / (per_block * self.cfg.depth).max(1)).clamp(1, 64)
    }

    /// Inference: embeds `batch` patchified segments laid out back to back.
    pub fn embed<T: Real>(&self, params: &[T], patches: &[T], batch: usize) -> Result<Vec<T>> {
        let seg = self.cfg.n_patches() * self.cfg.patch_len();
        if patches.len() != batch * seg {
            return Err(Error::Shape(format!("expected {batch} segments of {seg} values")));
        }
        let mut out = Vec::with_capacity(batch * self.cfg.embed_dim);
        for chunk in patches.chunks(self.chunk_size() * seg) {
            let (e, _) = self.forward::<T, rand::rngs::ThreadRng>(params, chunk, chunk.len() / seg, None)?;
            out.extend(e);
        }
        Ok(out)
    }

    /// Convenience: embeds one row-major mel.
    pub fn embed_mel(&self, params: &[f32], mel: &[f32]) -> Result<Vec<f32>> {
        self.embed(params, &patchify(mel, &self.cfg)?, 1)
    }

    /// Training forward pass; dropout (when configured) draws from `rng`.
    pub fn forward_train<T: Real, R: Rng>(
        &self,
        params: &[T],
        patches: &[T],
        batch: usize,
        rng: &mut R,
    ) -> Result<(Vec<T>, EncoderCache<T>)> {
        self.forward(params, patches, batch, Some(rng))
    }

    fn dropout_mask<T: Real, R: Rng>(&self, len: usize, rng: Option<&mut R>) -> Vec<T> {
        let p = self.cfg.dropout;
        match rng {
            Some(rng) if p > 0.0 => {
                let keep = T::from_f64_lossy(1.0 / (1.0 - p));
                (0..len)
                    .map(|_| if rng.random::<f64>() < p { T::zero() } else { keep })
                    .collect()
            }
            _ => Vec::new(),
        }
    }

    fn forward<T: Real, R: Rng>(
        &self,
        p: &[T],
        patches: &[T],
        batch: usize,
        mut rng: Option<&mut R>,
    ) -> Result<(Vec<T>, EncoderCache<T>)> {
        self.check_params(p.len())?;
        let n = self.cfg.n_patches();
        let w = self.cfg.width;
        let hid = self.cfg.mlp_ratio * w;
        let rows = batch * n;
        if patches.len() != rows * self.cfg.patch_len() {
            return Err(Error::Shape(format!("expected {batch} patchified segments")));
        }

        let mut x = vec![T::zero(); rows * w];
        self.patch.fwd(p, patches, rows, &mut x);
        let pos = &p[self.pos..self.pos + n * w];
        for seg in x.chunks_exact_mut(n * w) {
            for (v, &e) in seg.iter_mut().zip(pos) {
                *v += e;
            }
        }

        let mut caches = Vec::with_capacity(self.blocks.len());
        for blk in &self.blocks {
            let mut ln1 = vec![T::zero(); rows * w];
            let mut st1 = vec![(T::zero(), T::zero()); rows];
            blk.ln1.fwd(p, &x, &mut ln1, &mut st1);
            let mut qkv = vec![T::zero(); rows * 3 * w];
            blk.qkv.fwd(p, &ln1, rows, &mut qkv);
            let mut probs = vec![T::zero(); batch * self.cfg.heads * n * n];
            let mut attn = vec![T::zero(); rows * w];
            for b in 0..batch {
                attention_fwd(
                    &qkv[b * n * 3 * w..(b + 1) * n * 3 * w],
                    n,
                    w,
                    self.cfg.heads,
                    &mut probs[b * self.cfg.heads * n * n..(b + 1) * self.cfg.heads * n * n],
                    &mut attn[b * n * w..(b + 1) * n * w],
                );
            }
            let mut o = vec![T::zero(); rows * w];
            blk.proj.fwd(p, &attn, rows, &mut o);
            let drop1 = self.dropout_mask(rows * w, rng.as_deref_mut());
            let mut x_mid = x.clone();
            if drop1.is_empty() {
                x_mid.iter_mut().zip(&o).for_each(|(a, &b)| *a += b);
            } else {
                x_mid.iter_mut().zip(&o).zip(&drop1).for_each(|((a, &b), &m)| *a += b * m);
            }

            let mut ln2 = vec![T::zero(); rows * w];
            let mut st2 = vec![(T::zero(), T::zero()); rows];
            blk.ln2.fwd(p, &x_mid, &mut ln2, &mut st2);
            let mut hidden = vec![T::zero(); rows * hid];
            blk.fc1.fwd(p, &ln2, rows, &mut hidden);
            let act: Vec<T> = hidden.iter().map(|&v| gelu(v)).collect();
            let mut m = vec![T::zero(); rows * w];
            blk.fc2.fwd(p, &act, rows, &mut m);
            let drop2 = self.dropout_mask(rows * w, rng.as_deref_mut());
            let mut x_out = x_mid.clone();
            if drop2.is_empty() {
                x_out.iter_mut().zip(&m).for_each(|(a, &b)| *a += b);
            } else {
                x_out.iter_mut().zip(&m).zip(&drop2).for_each(|((a, &b), &k)| *a += b * k);
            }
            caches.push(BlockCache {
                x_in: std::mem::replace(&mut x, x_out),
                ln1,
                st1,
                qkv,
                probs,
                attn,
                drop1,
                x_mid,
                ln2,
                st2,
                hidden,
                act,
                drop2,
            });
        }

        let mut normed = vec![T::zero(); rows * w];
        let mut st_f = vec![(T::zero(), T::zero()); rows];
        self.ln_f.fwd(p, &x, &mut normed, &mut st_f);
        let inv_n = T::from_f64_lossy(1.0 / n as f64);
        let mut pooled = vec![T::zero(); batch * w];
        for b in 0..batch {
            let dst = &mut pooled[b * w..(b + 1) * w];
            for tok in normed[b * n * w..(b + 1) * n * w].chunks_exact(w) {
                dst.iter_mut().zip(tok).for_each(|(a, &v)| *a += v);
            }
            dst.iter_mut().for_each(|a| *a *= inv_n);
        }
        let mut emb = vec![T::zero(); batch * self.cfg.embed_dim];
        self.head.fwd(p, &pooled, batch, &mut emb);

        Ok((
            emb,
            EncoderCache {
                batch,
                patches: patches.to_vec(),
                blocks: caches,
                x_out: x,
                st_f,
                pooled,
            },
        ))
    }

    /// Accumulates `∂L/∂params` into `grads` given `∂L/∂embeddings`.
    pub fn backward<T: Real>(&self, p: &[T], cache: &EncoderCache<T>, d_emb: &[T], grads: &mut [T]) -> Result<()> {
        self.check_params(p.len())?;
        self.check_params(grads.len())?;
        let batch = cache.batch;
        if d_emb.len() != batch * self.cfg.embed_dim {
            return Err(Error::Shape("embedding gradient does not match the batch".into()));
        }
        let n = self.cfg.n_patches();
        let w = self.cfg.width;
        let hid = self.cfg.mlp_ratio * w;
        let rows = batch * n;

        let mut d_pooled = vec![T::zero(); batch * w];
        self.head.bwd(p, &cache.pooled, batch, d_emb, Some(&mut d_pooled), grads);
        let inv_n = T::from_f64_lossy(1.0 / n as f64);
        let mut d_norm = vec![T::zero(); rows * w];
        for b in 0..batch {
            let src = &d_pooled[b * w..(b + 1) * w];
            for tok in d_norm[b * n * w..(b + 1) * n * w].chunks_exact_mut(w) {
                tok.iter_mut().zip(src).for_each(|(a, &v)| *a = v * inv_n);
            }
        }
        let mut dx = vec![T::zero(); rows * w];
        self.ln_f.bwd(p, &cache.x_out, &cache.st_f, &d_norm, &mut dx, grads);

        let mut tmp_w = vec![T::zero(); rows * w];
        let mut d_hidden = vec![T::zero(); rows * hid];
        let mut d_qkv = vec![T::zero(); rows * 3 * w];
        let mut scratch = vec![T::zero(); 2 * n * n];
        for (blk, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            // MLP branch.
            let dm: Vec<T> = if c.drop2.is_empty() {
                dx.clone()
            } else {
                dx.iter().zip(&c.drop2).map(|(&a, &m)| a * m).collect()
            };
            blk.fc2.bwd(p, &c.act, rows, &dm, Some(&mut d_hidden), grads);
            d_hidden.iter_mut().zip(&c.hidden).for_each(|(d, &h)| *d *= gelu_grad(h));
            blk.fc1.bwd(p, &c.ln2, rows, &d_hidden, Some(&mut tmp_w), grads);
            let mut d_mid = vec![T::zero(); rows * w];
            blk.ln2.bwd(p, &c.x_mid, &c.st2, &tmp_w, &mut d_mid, grads);
            d_mid.iter_mut().zip(&dx).for_each(|(a, &b)| *a += b);

            // Attention branch.
            let d_o: Vec<T> = if c.drop1.is_empty() {
                d_mid.clone()
            } else {
                d_mid.iter().zip(&c.drop1).map(|(&a, &m)| a * m).collect()
            };
            blk.proj.bwd(p, &c.attn, rows, &d_o, Some(&mut tmp_w), grads);
            let hn = self.cfg.heads * n * n;
            for b in 0..batch {
                attention_bwd(
                    &c.qkv[b * n * 3 * w..(b + 1) * n * 3 * w],
                    n,
                    w,
                    self.cfg.heads,
                    &c.probs[b * hn..(b + 1) * hn],
                    &tmp_w[b * n * w..(b + 1) * n * w],
                    &mut d_qkv[b * n * 3 * w..(b + 1) * n * 3 * w],
                    &mut scratch,
                );
            }
            blk.qkv.bwd(p, &c.ln1, rows, &d_qkv, Some(&mut tmp_w), grads);
            blk.ln1.bwd(p, &c.x_in, &c.st1, &tmp_w, &mut dx, grads);
            dx.iter_mut().zip(&d_mid).for_each(|(a, &b)| *a += b);
        }

        let gpos = &mut grads[self.pos..self.pos + n * w];
        for seg in dx.chunks_exact(n * w) {
            gpos.iter_mut().zip(seg).for_each(|(a, &v)| *a += v);
        }
        self.patch.bwd(p, &cache.patches, rows, &dx, None, grads);
        Ok(())
    }
}
