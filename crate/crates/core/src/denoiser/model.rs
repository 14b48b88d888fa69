//! Patch-token transformer predicting flow-matching velocities.
//!
//! Layout of one forward pass:
//!
//! ```text
//! patches (n x p*p*C) -> linear -> + positional code + time embedding ---+
//! condition (COND_DIM) -> two linear maps -> + time embedding (2 tokens) -+-> [n + 2, d]
//! blocks x L: x += Attn(LN(x)); x += FFN(LN(x))        (pre-norm, GELU)
//! LN(image rows) -> zero-initialised linear head -> patches
//! ```
//!
//! Parameters live in one flat vector so that the optimizer, the checkpoint
//! and the finite-difference checker can treat them uniformly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cascade::{add_cascade, max_levels, PoolingMode, ScoreMap, TokenGrid, TokenSlices};
use crate::condition::COND_DIM;
use crate::error::{Error, Result};
use crate::grid::Latent;
use crate::linalg::{gemm, softmax_in_place, MatRef, Op, Real};

pub const CONDITION_TOKENS: usize = 2;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ToyModelConfig {
    pub panel_height: usize,
    pub panel_width: usize,
    pub channels: usize,
    pub patch_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub ffn_mult: usize,
    pub time_dim: usize,
    /// Add the fixed 2-D positional code to image tokens.
    pub positional: bool,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        Self {
            panel_height: 24,
            panel_width: 24,
            channels: 3,
            patch_size: 4,
            layers: 4,
            heads: 4,
            dim: 64,
            ffn_mult: 4,
            time_dim: 32,
            positional: true,
        }
    }
}

impl ToyModelConfig {
    pub fn validate(&self) -> Result<()> {
        let p = self.patch_size;
        if p == 0 || !self.panel_height.is_multiple_of(p) || !self.panel_width.is_multiple_of(p) {
            return Err(Error::invalid(format!(
                "patch size {p} must divide the {}x{} panel",
                self.panel_height, self.panel_width
            )));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::invalid(format!(
                "dim {} not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        if !self.dim.is_multiple_of(8) {
            return Err(Error::invalid("dim must be a multiple of 8 for the positional code"));
        }
        if self.layers == 0 || self.ffn_mult == 0 || self.channels == 0 {
            return Err(Error::invalid("layers, ffn_mult and channels must be positive"));
        }
        if self.time_dim == 0 || !self.time_dim.is_multiple_of(2) {
            return Err(Error::invalid("time_dim must be a positive even number"));
        }
        Ok(())
    }

    pub fn patch_len(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Tokens per panel along (rows, cols).
    pub fn panel_tokens(&self) -> (usize, usize) {
        (self.panel_height / self.patch_size, self.panel_width / self.patch_size)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug)]
struct BlockIx {
    ln1_g: usize,
    ln1_b: usize,
    qkv_w: usize,
    qkv_b: usize,
    o_w: usize,
    o_b: usize,
    ln2_g: usize,
    ln2_b: usize,
    f1_w: usize,
    f1_b: usize,
    f2_w: usize,
    f2_b: usize,
}

#[derive(Clone, Debug)]
struct Ix {
    pe_w: usize,
    pe_b: usize,
    t_w: usize,
    t_b: usize,
    c_w: [usize; CONDITION_TOKENS],
    c_b: [usize; CONDITION_TOKENS],
    blocks: Vec<BlockIx>,
    lnf_g: usize,
    lnf_b: usize,
    head_w: usize,
    head_b: usize,
}

enum Init {
    FanIn(usize),
    Zeros,
    Ones,
}

fn layout(cfg: &ToyModelConfig) -> (Vec<ParamSpec>, Vec<Init>, Ix) {
    let mut specs = Vec::new();
    let mut inits = Vec::new();
    let mut offset = 0;
    let mut add = |name: String, shape: Vec<usize>, init: Init| {
        let len: usize = shape.iter().product();
        specs.push(ParamSpec { name, shape, offset });
        inits.push(init);
        offset += len;
        offset - len
    };
    let (d, pl, hid) = (cfg.dim, cfg.patch_len(), cfg.dim * cfg.ffn_mult);
    let pe_w = add("patch_embed.weight".into(), vec![pl, d], Init::FanIn(pl));
    let pe_b = add("patch_embed.bias".into(), vec![d], Init::Zeros);
    let t_w = add(
        "time_embed.weight".into(),
        vec![cfg.time_dim, d],
        Init::FanIn(cfg.time_dim),
    );
    let t_b = add("time_embed.bias".into(), vec![d], Init::Zeros);
    let mut c_w = [0; CONDITION_TOKENS];
    let mut c_b = [0; CONDITION_TOKENS];
    for i in 0..CONDITION_TOKENS {
        c_w[i] = add(
            format!("cond_embed.{i}.weight"),
            vec![COND_DIM, d],
            Init::FanIn(COND_DIM),
        );
        c_b[i] = add(format!("cond_embed.{i}.bias"), vec![d], Init::Zeros);
    }
    let blocks = (0..cfg.layers)
        .map(|l| BlockIx {
            ln1_g: add(format!("blocks.{l}.ln1.gain"), vec![d], Init::Ones),
            ln1_b: add(format!("blocks.{l}.ln1.bias"), vec![d], Init::Zeros),
            qkv_w: add(format!("blocks.{l}.attn.qkv.weight"), vec![d, 3 * d], Init::FanIn(d)),
            qkv_b: add(format!("blocks.{l}.attn.qkv.bias"), vec![3 * d], Init::Zeros),
            o_w: add(format!("blocks.{l}.attn.out.weight"), vec![d, d], Init::FanIn(d)),
            o_b: add(format!("blocks.{l}.attn.out.bias"), vec![d], Init::Zeros),
            ln2_g: add(format!("blocks.{l}.ln2.gain"), vec![d], Init::Ones),
            ln2_b: add(format!("blocks.{l}.ln2.bias"), vec![d], Init::Zeros),
            f1_w: add(format!("blocks.{l}.ffn.up.weight"), vec![d, hid], Init::FanIn(d)),
            f1_b: add(format!("blocks.{l}.ffn.up.bias"), vec![hid], Init::Zeros),
            f2_w: add(format!("blocks.{l}.ffn.down.weight"), vec![hid, d], Init::FanIn(hid)),
            f2_b: add(format!("blocks.{l}.ffn.down.bias"), vec![d], Init::Zeros),
        })
        .collect();
    let lnf_g = add("final_norm.gain".into(), vec![d], Init::Ones);
    let lnf_b = add("final_norm.bias".into(), vec![d], Init::Zeros);
    let head_w = add("head.weight".into(), vec![d, pl], Init::Zeros);
    let head_b = add("head.bias".into(), vec![pl], Init::Zeros);
    let ix = Ix {
        pe_w,
        pe_b,
        t_w,
        t_b,
        c_w,
        c_b,
        blocks,
        lnf_g,
        lnf_b,
        head_w,
        head_b,
    };
    (specs, inits, ix)
}

/// Cascade settings for one forward pass.
#[derive(Clone, Debug)]
pub struct CascadeSpec {
    pub levels: usize,
    pub slices: TokenSlices,
    /// Per-layer enable flags; `None` enables every layer.
    pub layers: Option<Vec<bool>>,
    pub mode: PoolingMode,
}

impl CascadeSpec {
    fn enabled(&self, layer: usize) -> bool {
        self.levels > 1
            && self
                .layers
                .as_ref()
                .is_none_or(|m| m.get(layer).copied().unwrap_or(false))
    }
}

/// One sample in token form.
#[derive(Clone, Debug)]
pub struct TokenInput<F> {
    /// `n x patch_len`, row-major over the token grid.
    pub patches: Vec<F>,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub cond: [F; COND_DIM],
    pub t: F,
}

/// Head-averaged attention scores of the image-token block of one layer.
#[derive(Clone, Debug)]
pub struct CapturedAttention {
    pub tokens: usize,
    pub grid_rows: usize,
    pub grid_cols: usize,
    /// Raw fine scores, `n x n`.
    pub fine: Vec<f32>,
    /// Pooled score maps for levels `2..`.
    pub pooled: Vec<ScoreMap<f32>>,
    /// Fine scores plus the cascade contribution, `n x n`.
    pub aggregated: Vec<f32>,
    /// Softmax weights restricted to image keys, `n x n`.
    pub weights: Vec<f32>,
}

struct LnCache<F> {
    xhat: Vec<F>,
    rstd: Vec<F>,
}

struct BlockCache<F> {
    ln1: LnCache<F>,
    h: Vec<F>,
    qkv: Vec<F>,
    probs: Vec<F>,
    att: Vec<F>,
    ln2: LnCache<F>,
    h2: Vec<F>,
    u: Vec<F>,
    a: Vec<F>,
}

struct ForwardCache<F> {
    tokens: usize,
    image: usize,
    tfeat: Vec<F>,
    blocks: Vec<BlockCache<F>>,
    lnf: LnCache<F>,
    hf: Vec<F>,
}

#[derive(Clone, Debug)]
pub struct Model<F> {
    config: ToyModelConfig,
    specs: Vec<ParamSpec>,
    theta: Vec<F>,
    ix: Ix,
}

const LN_EPS: f64 = 1e-5;

impl<F: Real> Model<F> {
    /// Fan-in-scaled uniform weights, unit norm gains, zero biases and a zero head.
    pub fn init(config: ToyModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (specs, inits, ix) = layout(&config);
        let total = specs.last().map_or(0, |s| s.offset + s.len());
        let mut theta = vec![F::zero(); total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (spec, init) in specs.iter().zip(&inits) {
            let dst = &mut theta[spec.offset..spec.offset + spec.len()];
            match init {
                Init::Zeros => {}
                Init::Ones => dst.fill(F::one()),
                Init::FanIn(fan) => {
                    let bound = 1.0 / (*fan as f64).sqrt();
                    for v in dst.iter_mut() {
                        // Stored values stay f32-representable so checkpoints round-trip.
                        let w = rng.random_range(-bound..bound) as f32;
                        *v = F::lit(w as f64);
                    }
                }
            }
        }
        Ok(Self {
            config,
            specs,
            theta,
            ix,
        })
    }

    pub fn from_parts(config: ToyModelConfig, theta: Vec<F>) -> Result<Self> {
        config.validate()?;
        let (specs, _, ix) = layout(&config);
        let total = specs.last().map_or(0, |s| s.offset + s.len());
        if theta.len() != total {
            return Err(Error::shape(format!(
                "config needs {total} parameters, got {}",
                theta.len()
            )));
        }
        Ok(Self {
            config,
            specs,
            theta,
            ix,
        })
    }

    /// Same weights in another float type.
    pub fn cast<G: Real>(&self) -> Model<G> {
        Model {
            config: self.config.clone(),
            specs: self.specs.clone(),
            theta: self
                .theta
                .iter()
                .map(|v| G::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
            ix: self.ix.clone(),
        }
    }

    pub fn config(&self) -> &ToyModelConfig {
        &self.config
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn params(&self) -> &[F] {
        &self.theta
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.theta
    }

    pub fn param_count(&self) -> usize {
        self.theta.len()
    }

    fn p(&self, offset: usize, len: usize) -> &[F] {
        &self.theta[offset..offset + len]
    }

    /// Splits a `(H, W, C)` latent into `p x p` patches, `(py, px, c)` inner order.
    pub fn patchify(&self, latent: &Latent) -> Result<(Vec<F>, usize, usize)> {
        let p = self.config.patch_size;
        let (h, w, c) = latent.shape();
        if c != self.config.channels || h % p != 0 || w % p != 0 {
            return Err(Error::shape(format!(
                "latent {h}x{w}x{c} does not tile into {p}x{p}x{} patches",
                self.config.channels
            )));
        }
        let (rows, cols) = (h / p, w / p);
        let mut out = Vec::with_capacity(h * w * c);
        let src = latent.as_slice();
        for tr in 0..rows {
            for tc in 0..cols {
                for py in 0..p {
                    let start = ((tr * p + py) * w + tc * p) * c;
                    out.extend(src[start..start + p * c].iter().map(|&v| F::lit(v as f64)));
                }
            }
        }
        Ok((out, rows, cols))
    }

    pub fn unpatchify(&self, patches: &[F], rows: usize, cols: usize) -> Latent {
        let p = self.config.patch_size;
        let c = self.config.channels;
        let (h, w) = (rows * p, cols * p);
        let mut data = vec![0.0f32; h * w * c];
        let pl = self.config.patch_len();
        for tr in 0..rows {
            for tc in 0..cols {
                let patch = &patches[(tr * cols + tc) * pl..(tr * cols + tc + 1) * pl];
                for py in 0..p {
                    let dst = ((tr * p + py) * w + tc * p) * c;
                    for (o, &v) in data[dst..dst + p * c]
                        .iter_mut()
                        .zip(&patch[py * p * c..(py + 1) * p * c])
                    {
                        *o = v.to_f32().unwrap_or(f32::NAN);
                    }
                }
            }
        }
        Latent::from_raw(h, w, c, data)
    }

    fn time_features(&self, t: F) -> Vec<F> {
        let half = self.config.time_dim / 2;
        let scaled = t * F::lit(1000.0);
        let mut f = Vec::with_capacity(2 * half);
        for k in 0..half {
            let freq = F::lit((-(10000f64.ln()) * k as f64 / half as f64).exp());
            f.push((scaled * freq).sin());
        }
        for k in 0..half {
            let freq = F::lit((-(10000f64.ln()) * k as f64 / half as f64).exp());
            f.push((scaled * freq).cos());
        }
        f
    }

    /// Fixed code: quarters of the width encode in-panel row, in-panel column,
    /// panel row and panel column.
    fn positional(&self, rows: usize, cols: usize) -> Vec<F> {
        let d = self.config.dim;
        let quarter = d / 4;
        let (ptr, ptc) = self.config.panel_tokens();
        let mut out = vec![F::zero(); rows * cols * d];
        for tr in 0..rows {
            for tc in 0..cols {
                let coords = [tr % ptr, tc % ptc, tr / ptr, tc / ptc];
                let row = &mut out[(tr * cols + tc) * d..(tr * cols + tc + 1) * d];
                for (qi, &pos) in coords.iter().enumerate() {
                    for j in 0..quarter / 2 {
                        let freq = (-(16f64.ln()) * j as f64 / (quarter / 2) as f64).exp();
                        let angle = pos as f64 * freq;
                        row[qi * quarter + 2 * j] = F::lit(angle.sin());
                        row[qi * quarter + 2 * j + 1] = F::lit(angle.cos());
                    }
                }
            }
        }
        out
    }

    fn check_input(&self, input: &TokenInput<F>) -> Result<()> {
        let n = input.grid_rows * input.grid_cols;
        if n == 0 || input.patches.len() != n * self.config.patch_len() {
            return Err(Error::shape(format!(
                "{} patch values for a {}x{} token grid of {}-value patches",
                input.patches.len(),
                input.grid_rows,
                input.grid_cols,
                self.config.patch_len()
            )));
        }
        Ok(())
    }

    fn check_cascade(&self, input: &TokenInput<F>, cascade: Option<&CascadeSpec>) -> Result<()> {
        let Some(cs) = cascade else { return Ok(()) };
        let n = input.grid_rows * input.grid_cols;
        if let Some(&bad) = cs.slices.target.iter().chain(&cs.slices.reference).find(|&&i| i >= n) {
            return Err(Error::invalid(format!("cascade token {bad} out of range for n = {n}")));
        }
        let deepest = max_levels(input.grid_cols, cs.mode);
        if cs.levels > deepest {
            return Err(Error::invalid(format!(
                "{} cascade levels on a {}-token row; at most {deepest} fit",
                cs.levels, input.grid_cols
            )));
        }
        Ok(())
    }

    /// Predicted velocity patches, `n x patch_len`.
    pub fn forward(&self, input: &TokenInput<F>, cascade: Option<&CascadeSpec>) -> Result<Vec<F>> {
        self.check_input(input)?;
        self.check_cascade(input, cascade)?;
        Ok(self.run(input, cascade, None, false).0)
    }

    /// Forward pass that also records head-averaged scores of `layer`.
    pub fn forward_captured(
        &self,
        input: &TokenInput<F>,
        cascade: Option<&CascadeSpec>,
        layer: usize,
    ) -> Result<(Vec<F>, CapturedAttention)> {
        self.check_input(input)?;
        self.check_cascade(input, cascade)?;
        if layer >= self.config.layers {
            return Err(Error::invalid(format!(
                "layer {layer} out of range (model has {})",
                self.config.layers
            )));
        }
        let mut captured = None;
        let (out, _) = self.run(input, cascade, Some((layer, &mut captured)), false);
        Ok((out, captured.expect("capture layer was visited")))
    }

    fn run(
        &self,
        input: &TokenInput<F>,
        cascade: Option<&CascadeSpec>,
        mut capture: Option<(usize, &mut Option<CapturedAttention>)>,
        keep: bool,
    ) -> (Vec<F>, Option<ForwardCache<F>>) {
        let cfg = &self.config;
        let ix = &self.ix;
        let (d, pl, hid, heads, dh) = (
            cfg.dim,
            cfg.patch_len(),
            cfg.dim * cfg.ffn_mult,
            cfg.heads,
            cfg.head_dim(),
        );
        let n = input.grid_rows * input.grid_cols;
        let total = n + CONDITION_TOKENS;

        let tfeat = self.time_features(input.t);
        let mut temb = self.p(ix.t_b, d).to_vec();
        gemm(
            F::one(),
            MatRef::new(&tfeat, 1, cfg.time_dim),
            Op::N,
            MatRef::new(self.p(ix.t_w, cfg.time_dim * d), cfg.time_dim, d),
            Op::N,
            F::one(),
            &mut temb,
            d,
        );

        let mut x = vec![F::zero(); total * d];
        linear_into(
            &input.patches,
            n,
            pl,
            self.p(ix.pe_w, pl * d),
            self.p(ix.pe_b, d),
            d,
            &mut x[..n * d],
        );
        if cfg.positional {
            for (o, &v) in x[..n * d]
                .iter_mut()
                .zip(&self.positional(input.grid_rows, input.grid_cols))
            {
                *o += v;
            }
        }
        for i in 0..CONDITION_TOKENS {
            let row = &mut x[(n + i) * d..(n + i + 1) * d];
            linear_into(
                &input.cond,
                1,
                COND_DIM,
                self.p(ix.c_w[i], COND_DIM * d),
                self.p(ix.c_b[i], d),
                d,
                row,
            );
        }
        for row in x.chunks_mut(d) {
            for (o, &v) in row.iter_mut().zip(&temb) {
                *o += v;
            }
        }

        let scale = F::one() / F::lit(dh as f64).sqrt();
        let mut caches = Vec::with_capacity(if keep { cfg.layers } else { 0 });
        for (l, b) in ix.blocks.iter().enumerate() {
            let (h, ln1) = layer_norm(&x, total, d, self.p(b.ln1_g, d), self.p(b.ln1_b, d));
            let mut qkv = vec![F::zero(); total * 3 * d];
            linear_into(
                &h,
                total,
                d,
                self.p(b.qkv_w, d * 3 * d),
                self.p(b.qkv_b, 3 * d),
                3 * d,
                &mut qkv,
            );

            let cascade_here = cascade.filter(|c| c.enabled(l));
            let capturing = matches!(capture, Some((cl, _)) if cl == l);
            let mut cap = capturing.then(|| CaptureAcc::new(n, input.grid_rows, input.grid_cols));

            let mut probs = vec![F::zero(); heads * total * total];
            let mut att = vec![F::zero(); total * d];
            for hd in 0..heads {
                let s = &mut probs[hd * total * total..(hd + 1) * total * total];
                let qv = MatRef::strided(&qkv[hd * dh..], total, dh, 3 * d);
                let kv = MatRef::strided(&qkv[d + hd * dh..], total, dh, 3 * d);
                gemm(F::one(), qv, Op::N, kv, Op::T, F::zero(), s, total);
                if let Some(acc) = cap.as_mut() {
                    acc.add_fine(s, total);
                }
                if let Some(cs) = cascade_here {
                    let qg = head_tokens(&qkv, n, d, hd * dh, dh, input.grid_rows, input.grid_cols);
                    let kg = head_tokens(&qkv, n, d, d + hd * dh, dh, input.grid_rows, input.grid_cols);
                    let pooled = add_cascade(s, total, &qg, &kg, &cs.slices, cs.levels, cs.mode)
                        .expect("cascade inputs validated by the caller");
                    if let Some(acc) = cap.as_mut() {
                        acc.add_pooled(&pooled);
                    }
                }
                if let Some(acc) = cap.as_mut() {
                    acc.add_aggregated(s, total);
                }
                for row in s.chunks_mut(total) {
                    row.iter_mut().for_each(|v| *v *= scale);
                    softmax_in_place(row);
                }
                if let Some(acc) = cap.as_mut() {
                    acc.add_weights(s, total);
                }
                let vv = MatRef::strided(&qkv[2 * d + hd * dh..], total, dh, 3 * d);
                gemm(
                    F::one(),
                    MatRef::new(s, total, total),
                    Op::N,
                    vv,
                    Op::N,
                    F::zero(),
                    &mut att[hd * dh..],
                    d,
                );
            }
            if let (Some(acc), Some((_, slot))) = (cap, capture.as_mut()) {
                **slot = Some(acc.finish(heads));
            }

            let mut proj = vec![F::zero(); total * d];
            linear_into(&att, total, d, self.p(b.o_w, d * d), self.p(b.o_b, d), d, &mut proj);
            for (o, &v) in x.iter_mut().zip(&proj) {
                *o += v;
            }

            let (h2, ln2) = layer_norm(&x, total, d, self.p(b.ln2_g, d), self.p(b.ln2_b, d));
            let mut u = vec![F::zero(); total * hid];
            linear_into(&h2, total, d, self.p(b.f1_w, d * hid), self.p(b.f1_b, hid), hid, &mut u);
            let a: Vec<F> = u.iter().map(|&v| gelu(v)).collect();
            let mut f = vec![F::zero(); total * d];
            linear_into(&a, total, hid, self.p(b.f2_w, hid * d), self.p(b.f2_b, d), d, &mut f);
            for (o, &v) in x.iter_mut().zip(&f) {
                *o += v;
            }

            if keep {
                caches.push(BlockCache {
                    ln1,
                    h,
                    qkv,
                    probs,
                    att,
                    ln2,
                    h2,
                    u,
                    a,
                });
            }
        }

        let (hf, lnf) = layer_norm(&x[..n * d], n, d, self.p(ix.lnf_g, d), self.p(ix.lnf_b, d));
        let mut out = vec![F::zero(); n * pl];
        linear_into(
            &hf,
            n,
            d,
            self.p(ix.head_w, d * pl),
            self.p(ix.head_b, pl),
            pl,
            &mut out,
        );
        let cache = keep.then_some(ForwardCache {
            tokens: total,
            image: n,
            tfeat,
            blocks: caches,
            lnf,
            hf,
        });
        (out, cache)
    }

    /// Mean squared error against `target` and its gradient, accumulated into
    /// `grad` with weight `weight` (the loss itself is returned unweighted).
    pub fn loss_and_grad(&self, input: &TokenInput<F>, target: &[F], weight: F, grad: &mut [F]) -> Result<F> {
        self.check_input(input)?;
        if target.len() != input.patches.len() {
            return Err(Error::shape("target does not match the input patches"));
        }
        if grad.len() != self.theta.len() {
            return Err(Error::shape("gradient buffer does not match the parameters"));
        }
        let (out, cache) = self.run(input, None, None, true);
        let cache = cache.expect("cache requested");
        let count = F::lit(out.len() as f64);
        let mut loss = F::zero();
        let mut dout = Vec::with_capacity(out.len());
        for (&o, &y) in out.iter().zip(target) {
            let diff = o - y;
            loss += diff * diff;
            dout.push(F::lit(2.0) * diff * weight / count);
        }
        self.backward(input, &cache, &dout, grad);
        Ok(loss / count)
    }

    fn backward(&self, input: &TokenInput<F>, cache: &ForwardCache<F>, dout: &[F], grad: &mut [F]) {
        let cfg = &self.config;
        let ix = &self.ix;
        let (d, pl, hid, heads, dh) = (
            cfg.dim,
            cfg.patch_len(),
            cfg.dim * cfg.ffn_mult,
            cfg.heads,
            cfg.head_dim(),
        );
        let (n, total) = (cache.image, cache.tokens);

        let mut dhf = vec![F::zero(); n * d];
        linear_backward(
            &cache.hf,
            dout,
            n,
            d,
            pl,
            self.p(ix.head_w, d * pl),
            grad,
            ix.head_w,
            ix.head_b,
            &mut dhf,
        );
        let mut dx = vec![F::zero(); total * d];
        layer_norm_backward(
            &dhf,
            &cache.lnf,
            n,
            d,
            self.p(ix.lnf_g, d),
            grad,
            ix.lnf_g,
            ix.lnf_b,
            &mut dx[..n * d],
        );

        let scale = F::one() / F::lit(dh as f64).sqrt();
        for (b, bc) in ix.blocks.iter().zip(&cache.blocks).rev() {
            // Feed-forward branch.
            let mut da = vec![F::zero(); total * hid];
            linear_backward(
                &bc.a,
                &dx,
                total,
                hid,
                d,
                self.p(b.f2_w, hid * d),
                grad,
                b.f2_w,
                b.f2_b,
                &mut da,
            );
            for (g, &u) in da.iter_mut().zip(&bc.u) {
                *g *= gelu_grad(u);
            }
            let mut dh2 = vec![F::zero(); total * d];
            linear_backward(
                &bc.h2,
                &da,
                total,
                d,
                hid,
                self.p(b.f1_w, d * hid),
                grad,
                b.f1_w,
                b.f1_b,
                &mut dh2,
            );
            layer_norm_backward(
                &dh2,
                &bc.ln2,
                total,
                d,
                self.p(b.ln2_g, d),
                grad,
                b.ln2_g,
                b.ln2_b,
                &mut dx,
            );

            // Attention branch.
            let mut datt = vec![F::zero(); total * d];
            linear_backward(
                &bc.att,
                &dx,
                total,
                d,
                d,
                self.p(b.o_w, d * d),
                grad,
                b.o_w,
                b.o_b,
                &mut datt,
            );
            let mut dqkv = vec![F::zero(); total * 3 * d];
            let mut ds = vec![F::zero(); total * total];
            for hd in 0..heads {
                let probs = &bc.probs[hd * total * total..(hd + 1) * total * total];
                let dov = MatRef::strided(&datt[hd * dh..], total, dh, d);
                let vv = MatRef::strided(&bc.qkv[2 * d + hd * dh..], total, dh, 3 * d);
                // dP = dO V^T
                gemm(F::one(), dov, Op::N, vv, Op::T, F::zero(), &mut ds, total);
                // dV = P^T dO
                gemm(
                    F::one(),
                    MatRef::new(probs, total, total),
                    Op::T,
                    dov,
                    Op::N,
                    F::zero(),
                    &mut dqkv[2 * d + hd * dh..],
                    3 * d,
                );
                for (drow, prow) in ds.chunks_mut(total).zip(probs.chunks(total)) {
                    let inner = drow.iter().zip(prow).fold(F::zero(), |acc, (&g, &p)| acc + g * p);
                    for (g, &p) in drow.iter_mut().zip(prow) {
                        *g = p * (*g - inner) * scale;
                    }
                }
                let qv = MatRef::strided(&bc.qkv[hd * dh..], total, dh, 3 * d);
                let kv = MatRef::strided(&bc.qkv[d + hd * dh..], total, dh, 3 * d);
                // dQ = dS K, dK = dS^T Q
                gemm(
                    F::one(),
                    MatRef::new(&ds, total, total),
                    Op::N,
                    kv,
                    Op::N,
                    F::zero(),
                    &mut dqkv[hd * dh..],
                    3 * d,
                );
                gemm(
                    F::one(),
                    MatRef::new(&ds, total, total),
                    Op::T,
                    qv,
                    Op::N,
                    F::zero(),
                    &mut dqkv[d + hd * dh..],
                    3 * d,
                );
            }
            let mut dh = vec![F::zero(); total * d];
            linear_backward(
                &bc.h,
                &dqkv,
                total,
                d,
                3 * d,
                self.p(b.qkv_w, d * 3 * d),
                grad,
                b.qkv_w,
                b.qkv_b,
                &mut dh,
            );
            layer_norm_backward(
                &dh,
                &bc.ln1,
                total,
                d,
                self.p(b.ln1_g, d),
                grad,
                b.ln1_g,
                b.ln1_b,
                &mut dx,
            );
        }

        // Embeddings: every token carries the time embedding.
        let mut dtemb = vec![F::zero(); d];
        for row in dx.chunks(d) {
            for (o, &v) in dtemb.iter_mut().zip(row) {
                *o += v;
            }
        }
        outer_accumulate(&cache.tfeat, &dtemb, &mut grad[ix.t_w..ix.t_w + cfg.time_dim * d]);
        add_into(&mut grad[ix.t_b..ix.t_b + d], &dtemb);
        for i in 0..CONDITION_TOKENS {
            let drow = &dx[(n + i) * d..(n + i + 1) * d];
            outer_accumulate(&input.cond, drow, &mut grad[ix.c_w[i]..ix.c_w[i] + COND_DIM * d]);
            add_into(&mut grad[ix.c_b[i]..ix.c_b[i] + d], drow);
        }
        gemm(
            F::one(),
            MatRef::new(&input.patches, n, pl),
            Op::T,
            MatRef::new(&dx[..n * d], n, d),
            Op::N,
            F::one(),
            &mut grad[ix.pe_w..ix.pe_w + pl * d],
            d,
        );
        for row in dx[..n * d].chunks(d) {
            add_into(&mut grad[ix.pe_b..ix.pe_b + d], row);
        }
    }
}

fn head_tokens<F: Real>(
    qkv: &[F],
    n: usize,
    d: usize,
    col: usize,
    dh: usize,
    rows: usize,
    cols: usize,
) -> TokenGrid<F> {
    let mut data = Vec::with_capacity(n * dh);
    for i in 0..n {
        data.extend_from_slice(&qkv[i * 3 * d + col..i * 3 * d + col + dh]);
    }
    TokenGrid::from_raw(rows, cols, dh, data)
}

struct CaptureAcc {
    n: usize,
    rows: usize,
    cols: usize,
    fine: Vec<f64>,
    pooled: Vec<ScoreMap<f64>>,
    aggregated: Vec<f64>,
    weights: Vec<f64>,
}

impl CaptureAcc {
    fn new(n: usize, rows: usize, cols: usize) -> Self {
        Self {
            n,
            rows,
            cols,
            fine: vec![0.0; n * n],
            pooled: Vec::new(),
            aggregated: vec![0.0; n * n],
            weights: vec![0.0; n * n],
        }
    }

    fn add_block<F: Real>(dst: &mut [f64], src: &[F], n: usize, ld: usize) {
        for r in 0..n {
            for (o, v) in dst[r * n..(r + 1) * n].iter_mut().zip(&src[r * ld..r * ld + n]) {
                *o += v.to_f64().unwrap();
            }
        }
    }

    fn add_fine<F: Real>(&mut self, s: &[F], ld: usize) {
        Self::add_block(&mut self.fine, s, self.n, ld);
    }

    fn add_aggregated<F: Real>(&mut self, s: &[F], ld: usize) {
        Self::add_block(&mut self.aggregated, s, self.n, ld);
    }

    fn add_weights<F: Real>(&mut self, s: &[F], ld: usize) {
        Self::add_block(&mut self.weights, s, self.n, ld);
    }

    fn add_pooled<F: Real>(&mut self, maps: &[ScoreMap<F>]) {
        if self.pooled.is_empty() {
            self.pooled = maps
                .iter()
                .map(|m| ScoreMap {
                    rows: m.rows,
                    cols: m.cols,
                    data: vec![0.0; m.data.len()],
                })
                .collect();
        }
        for (acc, m) in self.pooled.iter_mut().zip(maps) {
            for (o, v) in acc.data.iter_mut().zip(&m.data) {
                *o += v.to_f64().unwrap();
            }
        }
    }

    fn finish(self, heads: usize) -> CapturedAttention {
        let inv = 1.0 / heads as f64;
        let avg = |v: Vec<f64>| v.into_iter().map(|x| (x * inv) as f32).collect::<Vec<f32>>();
        CapturedAttention {
            tokens: self.n,
            grid_rows: self.rows,
            grid_cols: self.cols,
            fine: avg(self.fine),
            pooled: self
                .pooled
                .into_iter()
                .map(|m| ScoreMap {
                    rows: m.rows,
                    cols: m.cols,
                    data: avg(m.data),
                })
                .collect(),
            aggregated: avg(self.aggregated),
            weights: avg(self.weights),
        }
    }
}

/// `y = x W + b` with `W` stored `in x out`.
fn linear_into<F: Real>(x: &[F], rows: usize, inp: usize, w: &[F], b: &[F], out: usize, y: &mut [F]) {
    for row in y.chunks_mut(out).take(rows) {
        row.copy_from_slice(b);
    }
    gemm(
        F::one(),
        MatRef::new(x, rows, inp),
        Op::N,
        MatRef::new(w, inp, out),
        Op::N,
        F::one(),
        y,
        out,
    );
}

/// Accumulates `dW += x^T dy`, `db += colsum(dy)` and writes `dx = dy W^T`.
#[allow(clippy::too_many_arguments)]
fn linear_backward<F: Real>(
    x: &[F],
    dy: &[F],
    rows: usize,
    inp: usize,
    out: usize,
    w: &[F],
    grad: &mut [F],
    w_off: usize,
    b_off: usize,
    dx: &mut [F],
) {
    gemm(
        F::one(),
        MatRef::new(x, rows, inp),
        Op::T,
        MatRef::new(dy, rows, out),
        Op::N,
        F::one(),
        &mut grad[w_off..w_off + inp * out],
        out,
    );
    for row in dy.chunks(out).take(rows) {
        add_into(&mut grad[b_off..b_off + out], row);
    }
    gemm(
        F::one(),
        MatRef::new(dy, rows, out),
        Op::N,
        MatRef::new(w, inp, out),
        Op::T,
        F::zero(),
        dx,
        inp,
    );
}

fn add_into<F: Real>(dst: &mut [F], src: &[F]) {
    for (o, &v) in dst.iter_mut().zip(src) {
        *o += v;
    }
}

fn outer_accumulate<F: Real>(a: &[F], b: &[F], dst: &mut [F]) {
    for (i, &av) in a.iter().enumerate() {
        if av == F::zero() {
            continue;
        }
        for (o, &bv) in dst[i * b.len()..(i + 1) * b.len()].iter_mut().zip(b) {
            *o += av * bv;
        }
    }
}

fn layer_norm<F: Real>(x: &[F], rows: usize, d: usize, g: &[F], b: &[F]) -> (Vec<F>, LnCache<F>) {
    let mut y = vec![F::zero(); rows * d];
    let mut xhat = vec![F::zero(); rows * d];
    let mut rstd = Vec::with_capacity(rows);
    let inv_d = F::one() / F::lit(d as f64);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<F>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
        let rs = F::one() / (var + F::lit(LN_EPS)).sqrt();
        rstd.push(rs);
        for c in 0..d {
            let xh = (row[c] - mean) * rs;
            xhat[r * d + c] = xh;
            y[r * d + c] = xh * g[c] + b[c];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Accumulates gain/bias gradients and adds the input gradient into `dx`.
#[allow(clippy::too_many_arguments)]
fn layer_norm_backward<F: Real>(
    dy: &[F],
    cache: &LnCache<F>,
    rows: usize,
    d: usize,
    g: &[F],
    grad: &mut [F],
    g_off: usize,
    b_off: usize,
    dx: &mut [F],
) {
    let inv_d = F::one() / F::lit(d as f64);
    for r in 0..rows {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let mut sum_g = F::zero();
        let mut sum_gx = F::zero();
        for c in 0..d {
            grad[g_off + c] += dyr[c] * xh[c];
            grad[b_off + c] += dyr[c];
            let gv = dyr[c] * g[c];
            sum_g += gv;
            sum_gx += gv * xh[c];
        }
        let rs = cache.rstd[r];
        for c in 0..d {
            let gv = dyr[c] * g[c];
            dx[r * d + c] += rs * (gv - sum_g * inv_d - xh[c] * sum_gx * inv_d);
        }
    }
}

const GELU_C: f64 = 0.044715;

#[inline]
fn gelu<F: Real>(u: F) -> F {
    let k = F::lit((2.0 / std::f64::consts::PI).sqrt());
    let inner = k * (u + F::lit(GELU_C) * u * u * u);
    F::lit(0.5) * u * (F::one() + inner.tanh())
}

#[inline]
fn gelu_grad<F: Real>(u: F) -> F {
    let k = F::lit((2.0 / std::f64::consts::PI).sqrt());
    let inner = k * (u + F::lit(GELU_C) * u * u * u);
    let th = inner.tanh();
    let dinner = k * (F::one() + F::lit(3.0 * GELU_C) * u * u);
    F::lit(0.5) * (F::one() + th) + F::lit(0.5) * u * (F::one() - th * th) * dinner
}
