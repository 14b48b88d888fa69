use std::fs::{self, OpenOptions};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use unfold_core::denoiser::train::{CsvLog, LogRow};
use unfold_core::denoiser::{Checkpoint, Model, ToyModelConfig, TrainConfig, Trainer};
use unfold_core::synth::corpus::{list_subjects, read_spec};
use unfold_core::synth::dataset::{train_subjects, MosaicDataset};

use super::common::*;
use crate::config::{Command, RunConfig};
use crate::error::{at_path, CliError};

#[derive(Clone, Debug)]
pub struct TrainOutputs {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
    pub manifest: PathBuf,
    pub final_step: u64,
}

pub fn train_config(cfg: &RunConfig) -> TrainConfig {
    let t = &cfg.train;
    TrainConfig {
        steps: t.steps,
        batch_size: t.batch_size,
        learning_rate: t.learning_rate,
        warmup_steps: t.warmup_steps,
        seed: t.seed,
        log_every: t.log_every,
        ..TrainConfig::default()
    }
}

pub fn dataset(cfg: &RunConfig, panel: usize) -> Result<MosaicDataset, CliError> {
    let mut ds = MosaicDataset::standard(panel);
    ds.subjects = match &cfg.train.corpus {
        Some(dir) => list_subjects(dir)
            .map_err(at_path(dir))?
            .iter()
            .map(|d| read_spec(d))
            .collect::<Result<_, _>>()?,
        None => train_subjects(cfg.train.subjects),
    };
    ds.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(ds)
}

/// Writes through a temporary file so a crash never leaves a torn checkpoint.
fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    ckpt.save(&tmp).map_err(at_path(&tmp))?;
    fs::rename(&tmp, path).map_err(at_path(path))
}

/// Trains the toy denoiser, checkpointing periodically. On divergence the
/// last finite state is saved and a divergence error is returned.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutputs, CliError> {
    if cfg.command != Command::Train {
        return Err(CliError::Usage(format!("config is for `{}`", cfg.command.name())));
    }
    check_inputs(cfg)?;
    let config = train_config(cfg);
    let mut trainer = match &cfg.train.resume {
        Some(p) => Trainer::resume(&Checkpoint::load(p).map_err(at_path(p))?, config)?,
        None => Trainer::new(Model::init(ToyModelConfig::default(), cfg.model_seed)?, config)?,
    };
    let panel = trainer.model().config().panel_height;
    let ds = dataset(cfg, panel)?;

    let checkpoint = output_file(cfg, "checkpoint.ckpt")?;
    let log_path = output_file(cfg, "loss.csv")?;
    let manifest = write_manifest(cfg)?;
    let appending = cfg.train.resume.is_some() && log_path.is_file();
    let file = OpenOptions::new()
        .create(true)
        .append(appending)
        .write(true)
        .truncate(!appending)
        .open(&log_path)
        .map_err(at_path(&log_path))?;
    let mut log = if appending {
        CsvLog::append(BufWriter::new(file))
    } else {
        CsvLog::new(BufWriter::new(file))?
    };

    let start = Instant::now();
    let (mut acc, mut count) = (0.0, 0u64);
    while trainer.step_count() < cfg.train.steps {
        let loss = match trainer.step(&ds) {
            Ok(l) => l,
            Err(e @ unfold_core::Error::Divergence { .. }) => {
                save_checkpoint(&trainer.checkpoint(), &checkpoint)?;
                return Err(e.into());
            }
            Err(e) => return Err(e.into()),
        };
        acc += loss;
        count += 1;
        let step = trainer.step_count();
        if step % cfg.train.log_every == 0 || step == cfg.train.steps {
            log.write(&LogRow {
                step,
                loss: acc / count as f64,
                wall_ms: start.elapsed().as_millis(),
            })?;
            log::info!("step {step} loss {:.5}", acc / count as f64);
            (acc, count) = (0.0, 0);
        }
        if step % cfg.train.checkpoint_every == 0 {
            save_checkpoint(&trainer.checkpoint(), &checkpoint)?;
        }
    }
    save_checkpoint(&trainer.checkpoint(), &checkpoint)?;
    Ok(TrainOutputs {
        checkpoint,
        log: log_path,
        manifest,
        final_step: trainer.step_count(),
    })
}
