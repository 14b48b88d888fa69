use std::fs;
use std::path::PathBuf;

use unfold_core::grid::{self, target_mask};
use unfold_core::sampler::complete;

use super::common::*;
use crate::config::{Command, RunConfig};
use crate::error::{at_path, CliError};

#[derive(Clone, Debug)]
pub struct GenerateOutputs {
    pub mosaic: PathBuf,
    pub target: PathBuf,
    pub prompt: PathBuf,
    pub manifest: PathBuf,
}

/// Completes the target panel of a mosaic built from the references.
pub fn cmd_generate(cfg: &RunConfig) -> Result<GenerateOutputs, CliError> {
    if cfg.command != Command::Generate {
        return Err(CliError::Usage(format!("config is for `{}`", cfg.command.name())));
    }
    check_inputs(cfg)?;
    let denoiser = load_denoiser(cfg)?;
    let panel = panel_of(&denoiser);
    let refs = load_references(cfg, panel)?;
    let layout = build_layout(cfg, refs.latents.len(), panel)?;
    let (cond, prompt) = resolve_prompt(cfg, &layout, &refs)?;
    let mosaic = grid::unfold(&refs.latents, &layout)?;
    let out = complete(&mosaic, &target_mask(&layout), &denoiser, &cond, &sampler_config(cfg))?;
    let (tr, tc) = layout.target();
    let target = grid::extract_panel(&out, &layout, tr, tc)?;

    let outputs = GenerateOutputs {
        mosaic: output_file(cfg, "mosaic.png")?,
        target: output_file(cfg, "target.png")?,
        prompt: output_file(cfg, "prompt.txt")?,
        manifest: write_manifest(cfg)?,
    };
    save_latent_png(&outputs.mosaic, &out)?;
    save_latent_png(&outputs.target, &target)?;
    fs::write(&outputs.prompt, prompt + "\n").map_err(at_path(&outputs.prompt))?;
    Ok(outputs)
}
