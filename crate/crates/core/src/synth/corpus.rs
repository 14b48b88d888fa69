//! Corpus on disk: `subject_NNNN/` directories with `view_K.png` renders and a
//! `spec.txt` of `key=value` lines.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};

use super::render::render_view;
use super::spec::{sample_view, SubjectSpec};

pub const SPEC_FILE: &str = "spec.txt";

pub fn subject_dir(root: &Path, index: usize) -> PathBuf {
    root.join(format!("subject_{index:04}"))
}

/// View `k` of subject `index`, reproducible from the corpus seed.
pub fn corpus_view_seed(seed: u64, index: usize, k: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ ((index as u64) << 16) ^ k as u64
}

/// Writes every subject with `views` renders; returns the subject directories.
pub fn write_corpus(
    root: &Path,
    subjects: &[SubjectSpec],
    views: usize,
    size: usize,
    seed: u64,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(root)?;
    subjects
        .par_iter()
        .enumerate()
        .map(|(i, spec)| {
            let dir = subject_dir(root, i);
            fs::create_dir_all(&dir)?;
            fs::write(dir.join(SPEC_FILE), spec.to_kv())?;
            for k in 0..views {
                let view = sample_view(corpus_view_seed(seed, i, k));
                render_view(spec, &view, size).save(dir.join(format!("view_{k}.png")))?;
            }
            Ok(dir)
        })
        .collect()
}

pub fn read_spec(dir: &Path) -> Result<SubjectSpec> {
    let path = dir.join(SPEC_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    SubjectSpec::from_kv(&text)
}

/// Subject directories under `root` in name order.
pub fn list_subjects(root: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join(SPEC_FILE).is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

/// One evaluated completion.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub subject: usize,
    pub grid: (usize, usize),
    pub cascade: bool,
    pub segment: bool,
    pub structured: bool,
    pub seed: u64,
    pub identity: f32,
    pub alignment: f32,
}

pub const EVAL_CSV_HEADER: &str = "subject,grid,cascade,segment,prompt,seed,identity,alignment";

pub fn write_eval_csv<W: Write>(mut out: W, rows: &[EvalRow]) -> Result<()> {
    writeln!(out, "{EVAL_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{}x{},{},{},{},{},{:.6},{:.6}",
            r.subject,
            r.grid.0,
            r.grid.1,
            if r.cascade { "on" } else { "off" },
            if r.segment { "on" } else { "off" },
            if r.structured { "structured" } else { "plain" },
            r.seed,
            r.identity,
            r.alignment
        )?;
    }
    Ok(())
}
