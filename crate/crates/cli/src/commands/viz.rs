use std::path::PathBuf;
use std::sync::Mutex;

use unfold_core::cascade::{upsample_scores, ScoreMap, TokenSlices};
use unfold_core::condition::Condition;
use unfold_core::denoiser::{CapturedAttention, ToyDenoiser};
use unfold_core::grid::{self, target_mask, Latent};
use unfold_core::io;
use unfold_core::sampler::{complete, Denoiser, StepContext};

use super::common::*;
use crate::config::{Command, RunConfig};
use crate::error::{at_path, CliError};

/// Records the conditional branch's scores of one layer at one step.
struct Capturing<'a> {
    inner: &'a ToyDenoiser,
    layer: usize,
    step: usize,
    captured: Mutex<Option<CapturedAttention>>,
}

impl Denoiser for Capturing<'_> {
    fn velocity(&self, state: &Latent, cond: &Condition, t: f32, ctx: &StepContext<'_>) -> unfold_core::Result<Latent> {
        if ctx.step != self.step || cond.is_null() {
            return self.inner.velocity(state, cond, t, ctx);
        }
        let (v, cap) = self.inner.velocity_captured(state, cond, t, ctx, self.layer)?;
        *self.captured.lock().unwrap() = Some(cap);
        Ok(v)
    }
}

/// Mean over the target-query rows of an `n x n` map: one value per key token.
pub fn key_profile(map: &[f32], n: usize, queries: &[usize]) -> Vec<f32> {
    let mut out = vec![0.0f32; n];
    for &q in queries {
        for (o, v) in out.iter_mut().zip(&map[q * n..(q + 1) * n]) {
            *o += v;
        }
    }
    let k = queries.len().max(1) as f32;
    out.iter_mut().for_each(|v| *v /= k);
    out
}

#[derive(Clone, Debug)]
pub struct VizOutputs {
    /// `level_1.png`, then `level_i.png` for coarser levels, then `aggregated.png`.
    pub heatmaps: Vec<PathBuf>,
    pub grid: (usize, usize),
    pub target: PathBuf,
    pub manifest: PathBuf,
}

/// Key-token heatmaps of the target queries' scores at one layer and step.
pub fn cmd_viz_attn(cfg: &RunConfig) -> Result<VizOutputs, CliError> {
    if cfg.command != Command::VizAttn {
        return Err(CliError::Usage(format!("config is for `{}`", cfg.command.name())));
    }
    require_checkpoint(cfg)?;
    check_inputs(cfg)?;
    let denoiser = load_denoiser(cfg)?;
    let layers = denoiser.model().config().layers;
    let layer = cfg.layer.unwrap_or(layers - 1);
    if layer >= layers {
        return Err(CliError::Usage(format!(
            "layer {layer} out of range; the model has {layers}"
        )));
    }
    let panel = panel_of(&denoiser);
    let refs = load_references(cfg, panel)?;
    let layout = build_layout(cfg, refs.latents.len(), panel)?;
    let (cond, _) = resolve_prompt(cfg, &layout, &refs)?;
    let mosaic = grid::unfold(&refs.latents, &layout)?;
    let mask = target_mask(&layout);
    let capturing = Capturing {
        inner: &denoiser,
        layer,
        step: cfg.viz_step,
        captured: Mutex::new(None),
    };
    let out = complete(&mosaic, &mask, &capturing, &cond, &sampler_config(cfg))?;
    let cap = capturing
        .captured
        .into_inner()
        .unwrap()
        .ok_or_else(|| CliError::Runtime("no conditional evaluation at the requested step".into()))?;

    let n = cap.tokens;
    let (rows, cols) = (cap.grid_rows, cap.grid_cols);
    let queries = TokenSlices::from_mask(&mask, denoiser.model().config().patch_size)?.target;
    let mut maps: Vec<(String, Vec<f32>)> = vec![("level_1.png".into(), key_profile(&cap.fine, n, &queries))];
    for (i, pooled) in cap.pooled.iter().enumerate() {
        let up: ScoreMap<f32> = upsample_scores(pooled, n)?;
        maps.push((format!("level_{}.png", i + 2), key_profile(&up.data, n, &queries)));
    }
    if !cap.pooled.is_empty() {
        maps.push(("aggregated.png".into(), key_profile(&cap.aggregated, n, &queries)));
    }

    let mut heatmaps = Vec::new();
    for (name, values) in maps {
        let path = output_file(cfg, &name)?;
        io::save_gray(&path, &io::heatmap(&values, rows, cols)?).map_err(at_path(&path))?;
        heatmaps.push(path);
    }
    let (tr, tc) = layout.target();
    let target = output_file(cfg, "target.png")?;
    save_latent_png(&target, &grid::extract_panel(&out, &layout, tr, tc)?)?;
    Ok(VizOutputs {
        heatmaps,
        grid: (rows, cols),
        target,
        manifest: write_manifest(cfg)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_profile_averages_query_rows() {
        let map = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0];
        assert_eq!(key_profile(&map, 3, &[0, 2]), vec![4.0, 5.0, 6.0]);
    }
}
