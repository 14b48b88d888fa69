use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::RgbaImage;
use unfold_core::condition::Condition;
use unfold_core::denoiser::{Checkpoint, Model, ToyDenoiser, ToyModelConfig};
use unfold_core::grid::{self, make_assignment, Latent, LatentRange, MosaicLayout};
use unfold_core::io;
use unfold_core::prompting::{
    build_mosaic_prompt, condition_from_descriptions, describe_edit, describe_subject, parse_meta_response,
    request_meta_descriptions, EndpointConfig, MetaPromptTemplate, MosaicPrompt,
};
use unfold_core::sampler::SamplerConfig;
use unfold_core::synth::corpus::{corpus_view_seed, read_spec, SPEC_FILE};
use unfold_core::synth::{render_view, sample_spec, sample_view, SubjectSpec};

use crate::config::{PromptMode, ReferenceSource, RunConfig};
use crate::error::{at_path, CliError};

fn must_exist(path: &Path, what: &str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} not found: {}", path.display())))
    }
}

/// Checks every input path named by the config before any compute.
pub fn check_inputs(cfg: &RunConfig) -> Result<(), CliError> {
    if let ReferenceSource::Paths(ps) = &cfg.references {
        for p in ps {
            must_exist(p, "reference")?;
        }
    }
    if let Some(c) = &cfg.checkpoint {
        must_exist(c, "checkpoint")?;
    }
    if let Some(s) = &cfg.scene {
        must_exist(s, "scene")?;
    }
    if let Some(r) = &cfg.train.resume {
        must_exist(r, "resume checkpoint")?;
    }
    if let Some(c) = &cfg.train.corpus {
        must_exist(c, "corpus")?;
    }
    if let Some(c) = &cfg.ablate.corpus {
        must_exist(c, "eval corpus")?;
    }
    Ok(())
}

pub fn require_checkpoint(cfg: &RunConfig) -> Result<&Path, CliError> {
    let path = cfg
        .checkpoint
        .as_deref()
        .ok_or_else(|| CliError::Usage(format!("{} needs a checkpoint", cfg.command.name())))?;
    must_exist(path, "checkpoint")?;
    Ok(path)
}

/// The checkpointed model, or a freshly initialized one when none is given.
pub fn load_denoiser(cfg: &RunConfig) -> Result<ToyDenoiser, CliError> {
    let model = match &cfg.checkpoint {
        Some(p) => Checkpoint::load(p).map_err(at_path(p))?.model()?,
        None => Model::init(ToyModelConfig::default(), cfg.model_seed)?,
    };
    Ok(ToyDenoiser::new(model).with_pooling(cfg.pooling))
}

pub fn latent_range(segment: bool) -> LatentRange {
    if segment {
        LatentRange::default()
    } else {
        LatentRange::default().ignoring_alpha()
    }
}

pub struct References {
    pub images: Vec<RgbaImage>,
    pub latents: Vec<Latent>,
    /// Procedural spec behind the references, when known.
    pub spec: Option<SubjectSpec>,
}

pub fn load_references(cfg: &RunConfig, panel: (usize, usize)) -> Result<References, CliError> {
    let (images, spec) = match &cfg.references {
        ReferenceSource::SubjectSeed(seed) => {
            let spec = sample_spec(*seed);
            let images = (0..cfg.views)
                .map(|k| render_view(&spec, &sample_view(corpus_view_seed(*seed, 0, k)), panel.0))
                .collect();
            (images, Some(spec))
        }
        ReferenceSource::Paths(paths) => {
            let images = paths
                .iter()
                .map(|p| io::load_rgba(p).map_err(at_path(p)))
                .collect::<Result<Vec<_>, _>>()?;
            let spec_file = paths[0].parent().map(|d| d.join(SPEC_FILE));
            let spec = match spec_file {
                Some(f) if f.is_file() => Some(read_spec(f.parent().unwrap())?),
                _ => None,
            };
            (images, spec)
        }
    };
    for (i, img) in images.iter().enumerate() {
        let dims = (img.height() as usize, img.width() as usize);
        if dims != panel {
            return Err(CliError::Usage(format!(
                "reference {i} is {}x{}, the model panel is {}x{}",
                dims.0, dims.1, panel.0, panel.1
            )));
        }
    }
    let range = latent_range(cfg.segment);
    let latents = images
        .iter()
        .map(|img| grid::to_latent(img, range))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(References { images, latents, spec })
}

pub fn panel_of(d: &ToyDenoiser) -> (usize, usize) {
    let c = d.model().config();
    (c.panel_height, c.panel_width)
}

pub fn build_layout(cfg: &RunConfig, references: usize, panel: (usize, usize)) -> Result<MosaicLayout, CliError> {
    let (rows, cols) = cfg.grid;
    let a = make_assignment(rows, cols, cfg.target, references, cfg.assign, cfg.assign_seed)
        .map_err(|e| CliError::Usage(e.to_string()))?;
    MosaicLayout::new(rows, cols, panel.0, panel.1, cfg.target, a).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn sampler_config(cfg: &RunConfig) -> SamplerConfig {
    SamplerConfig {
        steps: cfg.steps,
        guidance: cfg.guidance,
        seed: cfg.seed,
        final_blend: true,
        cascade_levels: cfg.cascade,
    }
}

fn png_bytes(img: &RgbaImage) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    img.write_to(&mut Cursor::new(&mut buf), image::ImageFormat::Png)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(buf)
}

/// The condition fed to the denoiser and the rendered prompt text.
pub fn resolve_prompt(
    cfg: &RunConfig,
    layout: &MosaicLayout,
    refs: &References,
) -> Result<(Condition, String), CliError> {
    let edit = cfg
        .edit_text
        .clone()
        .unwrap_or_else(|| describe_edit(cfg.background, cfg.pose));
    match cfg.prompt {
        PromptMode::Structured => {
            let spec = refs.spec.as_ref().ok_or_else(|| {
                CliError::Usage("structured prompts need a known subject (subject_seed or a corpus spec file)".into())
            })?;
            let cond = Condition::described(spec, cfg.background, cfg.pose);
            let text = build_mosaic_prompt(layout, &describe_subject(spec), &edit)?.render();
            Ok((cond, text))
        }
        PromptMode::Template => {
            let subject = match (&cfg.subject_text, &refs.spec) {
                (Some(t), _) => t.clone(),
                (None, Some(s)) => describe_subject(s),
                (None, None) => {
                    return Err(CliError::Usage(
                        "template prompts need subject_text when the subject is unknown".into(),
                    ))
                }
            };
            let prompt = build_mosaic_prompt(layout, &subject, &edit)?;
            let cond = condition_from_descriptions(&[subject.as_str(), edit.as_str()], None).condition;
            Ok((cond, prompt.render()))
        }
        PromptMode::Endpoint => {
            let url = cfg
                .endpoint_url
                .as_ref()
                .ok_or_else(|| CliError::Usage("endpoint prompts need endpoint_url".into()))?;
            let endpoint = EndpointConfig {
                credential_env: cfg.credential_env.clone(),
                ..EndpointConfig::new(url.clone())
            };
            let template = MetaPromptTemplate::new(layout.rows(), layout.cols())?;
            let raw = request_meta_descriptions(&endpoint, &png_bytes(&refs.images[0])?, &template)?;
            let meta = parse_meta_response(&raw, layout.rows(), layout.cols())?;
            let prompt = MosaicPrompt::from_descriptions(&meta, layout, &edit)?;
            let mut texts: Vec<&str> = prompt.panels.iter().map(String::as_str).collect();
            texts.push(&meta.summary);
            let cond = condition_from_descriptions(&texts, refs.spec.as_ref()).condition;
            Ok((cond, prompt.render()))
        }
    }
}

/// Creates the output directory and returns the path of `name` inside it.
pub fn output_file(cfg: &RunConfig, name: &str) -> Result<PathBuf, CliError> {
    fs::create_dir_all(&cfg.output).map_err(at_path(&cfg.output))?;
    Ok(cfg.output.join(name))
}

pub fn write_manifest(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let path = output_file(cfg, "manifest.txt")?;
    fs::write(&path, cfg.to_manifest()).map_err(at_path(&path))?;
    Ok(path)
}

pub fn save_latent_png(path: &Path, latent: &Latent) -> Result<(), CliError> {
    let img = grid::to_rgb_image(latent, LatentRange::default())?;
    io::save_rgb(path, &img).map_err(at_path(path))
}
