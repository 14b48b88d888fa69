//! Flow-matching training of the toy model with RMSProp.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::condition::Condition;
use crate::error::{Error, Result};
use crate::grid::Latent;

use super::checkpoint::Checkpoint;
use super::model::{Model, TokenInput};

/// One clean training example.
#[derive(Clone, Debug)]
pub struct TrainSample {
    pub data: Latent,
    pub cond: Condition,
}

/// Produces training examples from a seeded stream.
pub trait SampleSource: Sync {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<TrainSample>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub warmup_steps: u64,
    /// RMSProp second-moment decay.
    pub decay: f32,
    pub eps: f32,
    /// Global gradient-norm clip; 0 disables.
    pub clip_norm: f32,
    pub cond_dropout: f32,
    pub seed: u64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            learning_rate: 1e-3,
            warmup_steps: 100,
            decay: 0.99,
            eps: 1e-8,
            clip_norm: 1.0,
            cond_dropout: 0.1,
            seed: 0,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.decay) || !(self.eps > 0.0) {
            return Err(Error::invalid("learning rate, decay and eps out of range"));
        }
        if !(0.0..=1.0).contains(&self.cond_dropout) {
            return Err(Error::invalid("condition dropout must lie in [0, 1]"));
        }
        if self.log_every == 0 {
            return Err(Error::invalid("log interval must be positive"));
        }
        Ok(())
    }

    fn lr_at(&self, step: u64) -> f32 {
        if step < self.warmup_steps {
            self.learning_rate * (step + 1) as f32 / self.warmup_steps as f32
        } else {
            self.learning_rate
        }
    }
}

/// Noisy input and regression target for one example:
/// `x_t = (1 - t) noise + t data`, `v* = data - noise`.
pub fn fm_pair(data: &Latent, noise: &Latent, t: f32) -> Result<(Latent, Latent)> {
    data.ensure_same_shape(noise, "noise")?;
    let (h, w, c) = data.shape();
    let xt = data
        .as_slice()
        .iter()
        .zip(noise.as_slice())
        .map(|(&d, &n)| (1.0 - t) * n + t * d)
        .collect();
    let target = data
        .as_slice()
        .iter()
        .zip(noise.as_slice())
        .map(|(&d, &n)| d - n)
        .collect();
    Ok((Latent::from_raw(h, w, c, xt), Latent::from_raw(h, w, c, target)))
}

/// Prepared example: noisy input, target and the (possibly dropped) condition.
#[derive(Clone, Debug)]
pub struct BatchItem {
    pub xt: Latent,
    pub target: Latent,
    pub t: f32,
    pub cond: Condition,
    pub dropped: bool,
}

fn step_rng(seed: u64, step: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step);
    rng
}

/// Draws the batch for `step`; depends only on `(seed, step)`.
pub fn make_batch<S: SampleSource + ?Sized>(source: &S, config: &TrainConfig, step: u64) -> Result<Vec<BatchItem>> {
    let mut rng = step_rng(config.seed, step);
    (0..config.batch_size)
        .map(|_| {
            let sample = source.sample(&mut rng)?;
            let t: f32 = rng.random();
            let dropped = rng.random::<f32>() < config.cond_dropout;
            let (h, w, c) = sample.data.shape();
            let noise: Vec<f32> = (0..h * w * c).map(|_| StandardNormal.sample(&mut rng)).collect();
            let noise = Latent::from_raw(h, w, c, noise);
            let (xt, target) = fm_pair(&sample.data, &noise, t)?;
            Ok(BatchItem {
                xt,
                target,
                t,
                cond: if dropped { Condition::null() } else { sample.cond },
                dropped,
            })
        })
        .collect()
}

/// Mean over items of the per-item mean squared error; also returns the
/// gradient of that quantity.
pub fn fm_loss_and_grad(model: &Model<f32>, batch: &[BatchItem]) -> Result<(f64, Vec<f32>)> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let weight = 1.0 / batch.len() as f32;
    let parts: Vec<Result<(f32, Vec<f32>)>> = batch
        .par_iter()
        .map(|item| {
            let (patches, grid_rows, grid_cols) = model.patchify(&item.xt)?;
            let (target, _, _) = model.patchify(&item.target)?;
            let input = TokenInput {
                patches,
                grid_rows,
                grid_cols,
                cond: item.cond.features(),
                t: item.t,
            };
            let mut grad = vec![0.0f32; model.param_count()];
            let loss = model.loss_and_grad(&input, &target, weight, &mut grad)?;
            Ok((loss, grad))
        })
        .collect();
    let mut total = vec![0.0f32; model.param_count()];
    let mut loss = 0.0f64;
    for part in parts {
        let (l, g) = part?;
        loss += l as f64;
        total.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
    }
    Ok((loss / batch.len() as f64, total))
}

/// Loss only, for evaluation.
pub fn fm_loss(model: &Model<f32>, batch: &[BatchItem]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let mut total = 0.0f64;
    for item in batch {
        let (patches, grid_rows, grid_cols) = model.patchify(&item.xt)?;
        let input = TokenInput {
            patches,
            grid_rows,
            grid_cols,
            cond: item.cond.features(),
            t: item.t,
        };
        let out = model.forward(&input, None)?;
        let (target, _, _) = model.patchify(&item.target)?;
        let se: f64 = out.iter().zip(&target).map(|(a, b)| ((a - b) as f64).powi(2)).sum();
        total += se / out.len() as f64;
    }
    Ok(total / batch.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub loss: f64,
    pub wall_ms: u128,
}

pub struct Trainer {
    model: Model<f32>,
    rms: Vec<f32>,
    step: u64,
    config: TrainConfig,
}

impl Trainer {
    pub fn new(model: Model<f32>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let rms = vec![0.0; model.param_count()];
        Ok(Self {
            model,
            rms,
            step: 0,
            config,
        })
    }

    /// Continues from a checkpoint; the data stream resumes at its step.
    pub fn resume(checkpoint: &Checkpoint, mut config: TrainConfig) -> Result<Self> {
        config.validate()?;
        config.seed = checkpoint.dataset_seed;
        let model = checkpoint.model()?;
        let rms = checkpoint
            .optimizer
            .clone()
            .unwrap_or_else(|| vec![0.0; model.param_count()]);
        Ok(Self {
            model,
            rms,
            step: checkpoint.step,
            config,
        })
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_model(&self.model, self.step, self.config.seed, Some(self.rms.clone()))
    }

    /// One optimizer update. On a non-finite loss or gradient the parameters
    /// are left untouched and [`Error::Divergence`] is returned.
    pub fn step<S: SampleSource + ?Sized>(&mut self, source: &S) -> Result<f64> {
        let batch = make_batch(source, &self.config, self.step)?;
        let (loss, mut grad) = fm_loss_and_grad(&self.model, &batch)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { step: self.step, loss });
        }
        if self.config.clip_norm > 0.0 {
            let norm = grad.iter().map(|&g| (g as f64).powi(2)).sum::<f64>().sqrt();
            if norm > self.config.clip_norm as f64 {
                let s = (self.config.clip_norm as f64 / norm) as f32;
                grad.iter_mut().for_each(|g| *g *= s);
            }
        }
        let lr = self.config.lr_at(self.step);
        let (rho, eps) = (self.config.decay, self.config.eps);
        for ((p, r), &g) in self.model.params_mut().iter_mut().zip(self.rms.iter_mut()).zip(&grad) {
            *r = rho * *r + (1.0 - rho) * g * g;
            *p -= lr * g / (r.sqrt() + eps);
        }
        self.step += 1;
        Ok(loss)
    }

    /// Runs until `config.steps` total updates, calling `log` on every
    /// logging interval with the mean loss since the previous row.
    pub fn run<S: SampleSource + ?Sized>(
        &mut self,
        source: &S,
        log: &mut dyn FnMut(&LogRow) -> Result<()>,
    ) -> Result<()> {
        let start = Instant::now();
        let mut acc = 0.0;
        let mut count = 0u64;
        while self.step < self.config.steps {
            let loss = self.step(source)?;
            acc += loss;
            count += 1;
            if self.step.is_multiple_of(self.config.log_every) || self.step == self.config.steps {
                log(&LogRow {
                    step: self.step,
                    loss: acc / count as f64,
                    wall_ms: start.elapsed().as_millis(),
                })?;
                acc = 0.0;
                count = 0;
            }
        }
        Ok(())
    }
}

/// CSV training log with a `step,loss,wall_ms` header.
pub struct CsvLog<W: Write> {
    out: W,
}

impl<W: Write> CsvLog<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "step,loss,wall_ms")?;
        Ok(Self { out })
    }

    /// Continues an existing log without repeating the header.
    pub fn append(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, row: &LogRow) -> Result<()> {
        writeln!(self.out, "{},{:.6},{}", row.step, row.loss, row.wall_ms)?;
        self.out.flush()?;
        Ok(())
    }
}
