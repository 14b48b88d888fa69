//! Evaluation sweeps over grid size, cascade, segmentation and prompt mode.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::condition::Condition;
use crate::error::{Error, Result};
use crate::grid::{self, make_assignment, target_mask, AssignMode, LatentRange, MosaicLayout};
use crate::sampler::{complete, Denoiser, SamplerConfig, DEFAULT_CASCADE_LEVELS, DEFAULT_GUIDANCE, DEFAULT_STEPS};
use crate::synth::corpus::EvalRow;
use crate::synth::dataset::view_latent;
use crate::synth::{condition_alignment, sample_view, BackgroundClass, IdentityReference, PanelAnalysis, SubjectSpec};

/// One combination of the ablation axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub grid: (usize, usize),
    pub cascade: bool,
    pub segment: bool,
    pub structured: bool,
}

impl Cell {
    pub fn matches(&self, row: &EvalRow) -> bool {
        row.grid == self.grid
            && row.cascade == self.cascade
            && row.segment == self.segment
            && row.structured == self.structured
    }
}

/// Every combination of the given axis values, grid-major.
pub fn sweep(grids: &[(usize, usize)], cascade: &[bool], segment: &[bool], structured: &[bool]) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &grid in grids {
        for &s in segment {
            for &c in cascade {
                for &p in structured {
                    cells.push(Cell {
                        grid,
                        cascade: c,
                        segment: s,
                        structured: p,
                    });
                }
            }
        }
    }
    cells
}

#[derive(Clone, Debug)]
pub struct EvalSuite {
    pub subjects: Vec<SubjectSpec>,
    pub seeds: Vec<u64>,
    pub panel: usize,
    pub steps: usize,
    pub guidance: f32,
    pub cascade_levels: usize,
}

impl EvalSuite {
    pub fn new(subjects: Vec<SubjectSpec>, seeds: Vec<u64>, panel: usize) -> Self {
        Self {
            subjects,
            seeds,
            panel,
            steps: DEFAULT_STEPS,
            guidance: DEFAULT_GUIDANCE,
            cascade_levels: DEFAULT_CASCADE_LEVELS,
        }
    }
}

/// What a trial asks for; shared by every cell so that cells pair up.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrialSetup {
    pub reference: crate::synth::ViewParams,
    pub background: BackgroundClass,
    pub pose: bool,
    pub noise_seed: u64,
}

pub fn trial_setup(subject: usize, seed: u64) -> TrialSetup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(subject as u64);
    TrialSetup {
        reference: sample_view(rng.random()),
        background: BackgroundClass::ALL[rng.random_range(0..BackgroundClass::ALL.len())],
        pose: rng.random::<f32>() < 0.5,
        noise_seed: rng.random(),
    }
}

pub fn run_trial<D: Denoiser + ?Sized>(
    denoiser: &D,
    suite: &EvalSuite,
    cell: Cell,
    subject: usize,
    seed: u64,
) -> Result<EvalRow> {
    let spec = suite
        .subjects
        .get(subject)
        .ok_or_else(|| Error::invalid(format!("subject {subject} out of range")))?;
    let setup = trial_setup(subject, seed);
    let reference = view_latent(spec, &setup.reference, suite.panel, cell.segment);
    let (rows, cols) = cell.grid;
    let assignment = make_assignment(rows, cols, (0, 0), 1, AssignMode::Cycle, 0)?;
    let layout = MosaicLayout::new(rows, cols, suite.panel, suite.panel, (0, 0), assignment)?;
    let mosaic = grid::unfold(&[reference], &layout)?;
    let mask = target_mask(&layout);
    let cond = if cell.structured {
        Condition::described(spec, setup.background, setup.pose)
    } else {
        Condition::edit(setup.background, setup.pose)
    };
    let config = SamplerConfig {
        steps: suite.steps,
        guidance: suite.guidance,
        seed: setup.noise_seed,
        final_blend: true,
        cascade_levels: if cell.cascade { suite.cascade_levels } else { 1 },
    };
    let out = complete(&mosaic, &mask, denoiser, &cond, &config)?;
    let panel = grid::extract_panel(&out, &layout, 0, 0)?;
    let img = grid::to_rgb_image(&panel, LatentRange::default())?;
    let identity = IdentityReference::new(spec, suite.panel).score(&PanelAnalysis::from_image(&img)?);
    let alignment = condition_alignment(&img, &Condition::edit(setup.background, setup.pose))?;
    Ok(EvalRow {
        subject,
        grid: cell.grid,
        cascade: cell.cascade,
        segment: cell.segment,
        structured: cell.structured,
        seed,
        identity,
        alignment,
    })
}

/// Runs every `(cell, subject, seed)` on the rayon pool; rows come back in
/// cell, subject, seed order regardless of scheduling.
pub fn run_cells<D: Denoiser + ?Sized>(denoiser: &D, suite: &EvalSuite, cells: &[Cell]) -> Result<Vec<EvalRow>> {
    let jobs: Vec<(Cell, usize, u64)> = cells
        .iter()
        .flat_map(|&c| (0..suite.subjects.len()).flat_map(move |s| suite.seeds.iter().map(move |&seed| (c, s, seed))))
        .collect();
    jobs.par_iter()
        .map(|&(c, s, seed)| run_trial(denoiser, suite, c, s, seed))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellSummary {
    pub cell: Cell,
    pub count: usize,
    pub identity: f64,
    pub alignment: f64,
}

pub fn summarize(cells: &[Cell], rows: &[EvalRow]) -> Vec<CellSummary> {
    cells
        .iter()
        .map(|&cell| {
            let mine: Vec<&EvalRow> = rows.iter().filter(|r| cell.matches(r)).collect();
            let n = mine.len().max(1) as f64;
            CellSummary {
                cell,
                count: mine.len(),
                identity: mine.iter().map(|r| r.identity as f64).sum::<f64>() / n,
                alignment: mine.iter().map(|r| r.alignment as f64).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Per-trial scores of one cell in subject, seed order.
pub fn cell_scores(rows: &[EvalRow], cell: Cell, pick: impl Fn(&EvalRow) -> f32) -> Vec<f64> {
    let mut mine: Vec<&EvalRow> = rows.iter().filter(|r| cell.matches(r)).collect();
    mine.sort_by_key(|r| (r.subject, r.seed));
    mine.into_iter().map(|r| pick(r) as f64).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairedTest {
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    /// One-sided p-value for `mean(b - a) > 0`.
    pub p_greater: f64,
    pub p_two_sided: f64,
}

/// Paired t-test on `b - a`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::invalid(
            "paired test needs two equal-length samples of size >= 2",
        ));
    }
    let n = a.len();
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| y - x).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let t = if se > 0.0 {
        mean / se
    } else if mean > 0.0 {
        f64::INFINITY
    } else if mean < 0.0 {
        f64::NEG_INFINITY
    } else {
        0.0
    };
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::invalid(e.to_string()))?;
    let p_greater = if t.is_finite() {
        1.0 - dist.cdf(t)
    } else if t > 0.0 {
        0.0
    } else {
        1.0
    };
    let p_two_sided = if t.is_finite() {
        2.0 * (1.0 - dist.cdf(t.abs()))
    } else {
        0.0
    };
    Ok(PairedTest {
        n,
        mean_diff: mean,
        t,
        p_greater,
        p_two_sided,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Latent;
    use crate::sampler::StepContext;
    use crate::synth::sample_spec;

    /// Pulls every pixel toward the reference panel to its right.
    struct CopyRight;

    impl Denoiser for CopyRight {
        fn velocity(&self, x: &Latent, _: &Condition, t: f32, _: &StepContext<'_>) -> Result<Latent> {
            let (h, w, c) = x.shape();
            let mut out = vec![0.0f32; x.len()];
            for r in 0..h {
                for col in 0..w {
                    for ch in 0..c {
                        let src = x.get(r, (col + 24) % w, ch);
                        out[x.index(r, col, ch)] = (src - x.get(r, col, ch)) / (1.0 - t).max(0.05);
                    }
                }
            }
            Latent::new(h, w, c, out)
        }
    }

    #[test]
    fn sweep_enumerates_all_cells() {
        let cells = sweep(&[(1, 2), (3, 3)], &[false, true], &[true], &[false, true]);
        assert_eq!(cells.len(), 8);
        assert_eq!(cells[0].grid, (1, 2));
    }

    #[test]
    fn trials_are_paired_and_reproducible() {
        let suite = EvalSuite {
            steps: 4,
            ..EvalSuite::new((0..2).map(sample_spec).collect(), vec![0, 1], 24)
        };
        let cells = sweep(&[(1, 2)], &[false], &[true], &[false]);
        let a = run_cells(&CopyRight, &suite, &cells).unwrap();
        let b = run_cells(&CopyRight, &suite, &cells).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert!(a
            .iter()
            .all(|r| (0.0..=1.0).contains(&r.identity) && (0.0..=1.0).contains(&r.alignment)));
        assert_eq!(trial_setup(1, 0), trial_setup(1, 0));
    }

    #[test]
    fn paired_test_detects_shift() {
        let a: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = a
            .iter()
            .enumerate()
            .map(|(i, v)| v + 0.1 + 0.01 * (i as f64).cos())
            .collect();
        let t = paired_t_test(&a, &b).unwrap();
        assert!(t.p_greater < 1e-6 && t.mean_diff > 0.09);
        let back = paired_t_test(&b, &a).unwrap();
        assert!(back.p_greater > 0.99);
        assert!(paired_t_test(&a, &a[..3]).is_err());
    }
}
