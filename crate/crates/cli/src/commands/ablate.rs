use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use unfold_core::ablation::{run_cells, summarize, sweep, Cell, CellSummary, EvalSuite};
use unfold_core::synth::corpus::{list_subjects, read_spec, write_eval_csv, EvalRow};
use unfold_core::synth::dataset::eval_subjects;

use super::common::*;
use crate::config::{Command, RunConfig};
use crate::error::{at_path, CliError};
use crate::plot::bar_chart;

pub const SUMMARY_HEADER: &str = "Grid,Segment,Cascade,Prompt,Identity,Alignment";

#[derive(Clone, Debug)]
pub struct AblateOutputs {
    pub summary_csv: PathBuf,
    pub trials_csv: PathBuf,
    pub identity_plot: PathBuf,
    pub alignment_plot: PathBuf,
    pub manifest: PathBuf,
    pub summaries: Vec<CellSummary>,
    pub rows: Vec<EvalRow>,
}

pub fn cells(cfg: &RunConfig) -> Vec<Cell> {
    let a = &cfg.ablate;
    sweep(&a.grids, &a.cascade, &a.segment, &a.structured)
}

pub fn suite(cfg: &RunConfig, panel: usize) -> Result<EvalSuite, CliError> {
    let subjects = match &cfg.ablate.corpus {
        Some(dir) => list_subjects(dir)
            .map_err(at_path(dir))?
            .iter()
            .take(cfg.ablate.subjects)
            .map(|d| read_spec(d))
            .collect::<Result<Vec<_>, _>>()?,
        None => eval_subjects(cfg.ablate.subjects),
    };
    Ok(EvalSuite {
        steps: cfg.steps,
        guidance: cfg.guidance,
        cascade_levels: cfg.cascade.max(2),
        ..EvalSuite::new(subjects, cfg.ablate.seeds.clone(), panel)
    })
}

pub fn write_summary_csv<W: Write>(mut out: W, summaries: &[CellSummary]) -> std::io::Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    let onoff = |b: bool| if b { "on" } else { "off" };
    for s in summaries {
        writeln!(
            out,
            "{}x{},{},{},{},{:.6},{:.6}",
            s.cell.grid.0,
            s.cell.grid.1,
            onoff(s.cell.segment),
            onoff(s.cell.cascade),
            if s.cell.structured { "structured" } else { "plain" },
            s.identity,
            s.alignment
        )?;
    }
    out.flush()
}

/// Sweeps the configured axes over the evaluation subjects and seeds.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<AblateOutputs, CliError> {
    if cfg.command != Command::Ablate {
        return Err(CliError::Usage(format!("config is for `{}`", cfg.command.name())));
    }
    require_checkpoint(cfg)?;
    check_inputs(cfg)?;
    let denoiser = load_denoiser(cfg)?;
    let suite = suite(cfg, panel_of(&denoiser).0)?;
    let cells = cells(cfg);
    let rows = run_cells(&denoiser, &suite, &cells)?;
    let summaries = summarize(&cells, &rows);

    let summary_csv = output_file(cfg, "ablation.csv")?;
    let trials_csv = output_file(cfg, "trials.csv")?;
    let identity_plot = output_file(cfg, "identity.png")?;
    let alignment_plot = output_file(cfg, "alignment.png")?;
    let manifest = write_manifest(cfg)?;
    let f = File::create(&summary_csv).map_err(at_path(&summary_csv))?;
    write_summary_csv(BufWriter::new(f), &summaries).map_err(at_path(&summary_csv))?;
    let f = File::create(&trials_csv).map_err(at_path(&trials_csv))?;
    write_eval_csv(BufWriter::new(f), &rows)?;

    // One bar group per grid, in sweep order.
    let grouped = |pick: fn(&CellSummary) -> f64| -> Vec<Vec<f64>> {
        cfg.ablate
            .grids
            .iter()
            .map(|&g| summaries.iter().filter(|s| s.cell.grid == g).map(pick).collect())
            .collect()
    };
    bar_chart(&grouped(|s| s.identity))
        .save(&identity_plot)
        .map_err(at_path(&identity_plot))?;
    bar_chart(&grouped(|s| s.alignment))
        .save(&alignment_plot)
        .map_err(at_path(&alignment_plot))?;
    Ok(AblateOutputs {
        summary_csv,
        trials_csv,
        identity_plot,
        alignment_plot,
        manifest,
        summaries,
        rows,
    })
}
