//! Sampler-facing wrapper around the trained toy model.

use crate::cascade::{max_levels, PoolingMode, TokenSlices};
use crate::condition::Condition;
use crate::error::Result;
use crate::grid::{Latent, PanelMask};
use crate::sampler::{Denoiser, StepContext};

use super::model::{CapturedAttention, CascadeSpec, Model, TokenInput};

#[derive(Clone, Debug)]
pub struct ToyDenoiser {
    model: Model<f32>,
    cascade_layers: Option<Vec<bool>>,
    pooling: PoolingMode,
}

impl ToyDenoiser {
    pub fn new(model: Model<f32>) -> Self {
        Self {
            model,
            cascade_layers: None,
            pooling: PoolingMode::default(),
        }
    }

    /// Restricts the cascade to the flagged layers.
    pub fn with_cascade_layers(mut self, layers: Vec<bool>) -> Self {
        self.cascade_layers = Some(layers);
        self
    }

    pub fn with_pooling(mut self, mode: PoolingMode) -> Self {
        self.pooling = mode;
        self
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn token_input(&self, state: &Latent, cond: &Condition, t: f32) -> Result<TokenInput<f32>> {
        let (patches, grid_rows, grid_cols) = self.model.patchify(state)?;
        Ok(TokenInput {
            patches,
            grid_rows,
            grid_cols,
            cond: cond.features(),
            t,
        })
    }

    /// Cascade settings for a step, or `None` when it is disabled or has
    /// nothing to act on. Depth is capped at what the token row can pool.
    pub fn cascade_for(&self, mask: &PanelMask, levels: usize) -> Result<Option<CascadeSpec>> {
        let patch = self.model.config().patch_size;
        let levels = levels.min(max_levels(mask.width() / patch.max(1), self.pooling));
        if levels < 2 {
            return Ok(None);
        }
        let slices = TokenSlices::from_mask(mask, patch)?;
        if slices.is_empty() {
            return Ok(None);
        }
        Ok(Some(CascadeSpec {
            levels,
            slices,
            layers: self.cascade_layers.clone(),
            mode: self.pooling,
        }))
    }

    /// Velocity plus the head-averaged scores of `layer`.
    pub fn velocity_captured(
        &self,
        state: &Latent,
        cond: &Condition,
        t: f32,
        ctx: &StepContext<'_>,
        layer: usize,
    ) -> Result<(Latent, CapturedAttention)> {
        let input = self.token_input(state, cond, t)?;
        let cascade = self.cascade_for(ctx.mask, ctx.cascade_levels)?;
        let (out, cap) = self.model.forward_captured(&input, cascade.as_ref(), layer)?;
        Ok((self.model.unpatchify(&out, input.grid_rows, input.grid_cols), cap))
    }
}

impl Denoiser for ToyDenoiser {
    fn velocity(&self, state: &Latent, cond: &Condition, t: f32, ctx: &StepContext<'_>) -> Result<Latent> {
        let input = self.token_input(state, cond, t)?;
        let cascade = self.cascade_for(ctx.mask, ctx.cascade_levels)?;
        let out = self.model.forward(&input, cascade.as_ref())?;
        Ok(self.model.unpatchify(&out, input.grid_rows, input.grid_cols))
    }
}
