use std::fs;
use std::path::PathBuf;

use image::{Rgb, RgbImage};
use unfold_core::grid::{self, LatentRange};
use unfold_core::io;
use unfold_core::sampler::complete_region;

use super::common::*;
use crate::config::{Command, RunConfig};
use crate::error::{at_path, CliError};

#[derive(Clone, Debug)]
pub struct EditOutputs {
    pub mosaic: PathBuf,
    pub before: PathBuf,
    pub after: PathBuf,
    pub overlay: PathBuf,
    pub prompt: PathBuf,
    pub manifest: PathBuf,
}

const OVERLAY: [u8; 3] = [255, 0, 0];

/// `after` with the edited rectangle tinted and outlined.
fn overlay(after: &RgbImage, r: grid::Rect) -> RgbImage {
    let mut img = after.clone();
    for y in r.top..r.top + r.height {
        for x in r.left..r.left + r.width {
            let edge = y == r.top || x == r.left || y + 1 == r.top + r.height || x + 1 == r.left + r.width;
            let p = img.get_pixel(x as u32, y as u32).0;
            let mix = |c: usize| {
                if edge {
                    OVERLAY[c]
                } else {
                    ((p[c] as u16 + OVERLAY[c] as u16) / 2) as u8
                }
            };
            img.put_pixel(x as u32, y as u32, Rgb([mix(0), mix(1), mix(2)]));
        }
    }
    img
}

/// Re-synthesizes `rect` of the scene panel, keeping everything else.
pub fn cmd_edit(cfg: &RunConfig) -> Result<EditOutputs, CliError> {
    if cfg.command != Command::Edit {
        return Err(CliError::Usage(format!("config is for `{}`", cfg.command.name())));
    }
    let scene_path = cfg
        .scene
        .as_ref()
        .ok_or_else(|| CliError::Usage("edit needs a scene".into()))?;
    let rect = cfg.rect.ok_or_else(|| CliError::Usage("edit needs a rect".into()))?;
    check_inputs(cfg)?;
    let denoiser = load_denoiser(cfg)?;
    let panel = panel_of(&denoiser);
    if rect.area() == 0 || rect.top + rect.height > panel.0 || rect.left + rect.width > panel.1 {
        return Err(CliError::Usage(format!(
            "rect {},{},{},{} outside the {}x{} panel",
            rect.top, rect.left, rect.height, rect.width, panel.0, panel.1
        )));
    }
    let scene_img = io::load_rgba(scene_path).map_err(at_path(scene_path))?;
    if (scene_img.height() as usize, scene_img.width() as usize) != panel {
        return Err(CliError::Usage(format!(
            "scene is {}x{}, the model panel is {}x{}",
            scene_img.height(),
            scene_img.width(),
            panel.0,
            panel.1
        )));
    }
    let scene = grid::to_latent(&scene_img, LatentRange::default().ignoring_alpha())?;
    let refs = load_references(cfg, panel)?;
    let layout = build_layout(cfg, refs.latents.len(), panel)?;
    let (cond, prompt) = resolve_prompt(cfg, &layout, &refs)?;
    let out = complete_region(
        &scene,
        &layout,
        rect,
        &refs.latents,
        &denoiser,
        &cond,
        &sampler_config(cfg),
    )?;
    let (tr, tc) = layout.target();
    let after = grid::extract_panel(&out, &layout, tr, tc)?;
    let after_img = grid::to_rgb_image(&after, LatentRange::default())?;

    let outputs = EditOutputs {
        mosaic: output_file(cfg, "mosaic.png")?,
        before: output_file(cfg, "before.png")?,
        after: output_file(cfg, "after.png")?,
        overlay: output_file(cfg, "mask_overlay.png")?,
        prompt: output_file(cfg, "prompt.txt")?,
        manifest: write_manifest(cfg)?,
    };
    save_latent_png(&outputs.mosaic, &out)?;
    save_latent_png(&outputs.before, &scene)?;
    io::save_rgb(&outputs.after, &after_img).map_err(at_path(&outputs.after))?;
    io::save_rgb(&outputs.overlay, &overlay(&after_img, rect)).map_err(at_path(&outputs.overlay))?;
    fs::write(&outputs.prompt, prompt + "\n").map_err(at_path(&outputs.prompt))?;
    Ok(outputs)
}
