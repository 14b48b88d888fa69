//! Training mosaics: reference panels of one subject around a clean target
//! view that carries the conditioned background and pose.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::condition::Condition;
use crate::denoiser::train::{SampleSource, TrainSample};
use crate::error::{Error, Result};
use crate::grid::{self, make_assignment, AssignMode, Latent, MosaicLayout};

use super::render::render_layers;
use super::spec::{sample_spec, sample_view, BackgroundClass, SubjectSpec, ViewParams};

/// White fill used when references are segmented.
pub const SEGMENT_FILL: f32 = 1.0;
/// Subject seeds used for training start here; evaluation uses [`EVAL_SEED_BASE`].
pub const TRAIN_SEED_BASE: u64 = 0;
pub const EVAL_SEED_BASE: u64 = 1_000_000;
pub const TRAIN_SUBJECTS: usize = 512;
pub const EVAL_SUBJECTS: usize = 64;

pub fn train_subjects(count: usize) -> Vec<SubjectSpec> {
    (0..count as u64).map(|i| sample_spec(TRAIN_SEED_BASE + i)).collect()
}

pub fn eval_subjects(count: usize) -> Vec<SubjectSpec> {
    (0..count as u64).map(|i| sample_spec(EVAL_SEED_BASE + i)).collect()
}

/// Renders one view as a latent, optionally over the white segment fill.
pub fn view_latent(spec: &SubjectSpec, view: &ViewParams, size: usize, segment: bool) -> Latent {
    render_layers(spec, view, size).to_latent(segment.then_some(SEGMENT_FILL))
}

#[derive(Clone, Debug)]
pub struct MosaicDataset {
    pub subjects: Vec<SubjectSpec>,
    pub panel: usize,
    /// `(rows, cols, weight)`; the target is always panel (0, 0).
    pub grids: Vec<(usize, usize, f32)>,
    /// Probability that every reference panel shows the same view.
    pub single_view_prob: f32,
    pub max_views: usize,
    pub segment_prob: f32,
    /// Probability that the condition also describes the subject.
    pub describe_prob: f32,
    /// Probability that the target is re-posed instead of copying the
    /// first reference's pose.
    pub pose_prob: f32,
}

impl MosaicDataset {
    pub fn standard(panel: usize) -> Self {
        Self {
            subjects: train_subjects(TRAIN_SUBJECTS),
            panel,
            grids: vec![(1, 2, 0.25), (2, 2, 0.25), (3, 3, 0.5)],
            single_view_prob: 0.6,
            max_views: 4,
            segment_prob: 0.5,
            describe_prob: 0.5,
            pose_prob: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.subjects.is_empty() {
            return Err(Error::invalid("dataset has no subjects"));
        }
        if self.grids.is_empty() || self.grids.iter().any(|&(r, c, w)| r * c < 2 || !(w >= 0.0)) {
            return Err(Error::invalid(
                "grids need at least two panels and non-negative weights",
            ));
        }
        if self.grids.iter().map(|g| g.2).sum::<f32>() <= 0.0 {
            return Err(Error::invalid("grid weights sum to zero"));
        }
        Ok(())
    }

    fn pick_grid(&self, rng: &mut ChaCha8Rng) -> (usize, usize) {
        let total: f32 = self.grids.iter().map(|g| g.2).sum();
        let mut u = rng.random::<f32>() * total;
        for &(r, c, w) in &self.grids {
            if u < w {
                return (r, c);
            }
            u -= w;
        }
        let last = self.grids.last().unwrap();
        (last.0, last.1)
    }
}

impl SampleSource for MosaicDataset {
    fn sample(&self, rng: &mut ChaCha8Rng) -> Result<TrainSample> {
        let spec = self.subjects[rng.random_range(0..self.subjects.len())];
        let (rows, cols) = self.pick_grid(rng);
        let panels = rows * cols;

        let first = sample_view(rng.random());
        let most = self.max_views.min(panels - 1);
        let views = if most < 2 || rng.random::<f32>() < self.single_view_prob {
            1
        } else {
            rng.random_range(2..=most)
        };
        let mut ref_views = vec![first];
        ref_views.extend((1..views).map(|_| sample_view(rng.random())));
        let segment = rng.random::<f32>() < self.segment_prob;
        let references: Vec<Latent> = ref_views
            .iter()
            .map(|v| view_latent(&spec, v, self.panel, segment))
            .collect();

        let background = BackgroundClass::ALL[rng.random_range(0..BackgroundClass::ALL.len())];
        let pose = rng.random::<f32>() < self.pose_prob;
        let posed = sample_view(rng.random());
        let target_view = ViewParams {
            rotation: if pose { posed.rotation } else { first.rotation },
            translation: if pose { posed.translation } else { first.translation },
            background,
            background_seed: rng.random(),
        };
        let target = view_latent(&spec, &target_view, self.panel, false);

        let assignment = make_assignment(rows, cols, (0, 0), references.len(), AssignMode::Cycle, 0)?;
        let layout = MosaicLayout::new(rows, cols, self.panel, self.panel, (0, 0), assignment)?;
        let mosaic = grid::unfold(&references, &layout)?;
        let data = grid::insert_panel(&mosaic, &layout, 0, 0, &target)?;

        let mut cond = Condition::described(&spec, background, pose);
        if rng.random::<f32>() >= self.describe_prob {
            cond = cond.without_subject();
        }
        Ok(TrainSample { data, cond })
    }
}

/// Deterministic dataset stream for inspection: the `index`-th sample of `seed`.
pub fn preview_sample(dataset: &MosaicDataset, seed: u64, index: u64) -> Result<TrainSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    dataset.sample(&mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_have_grid_shapes_and_are_reproducible() {
        let ds = MosaicDataset::standard(24);
        ds.validate().unwrap();
        let mut shapes = std::collections::BTreeSet::new();
        for i in 0..60 {
            let a = preview_sample(&ds, 3, i).unwrap();
            let b = preview_sample(&ds, 3, i).unwrap();
            assert_eq!(a.data, b.data);
            assert_eq!(a.cond, b.cond);
            assert!(a.data.as_slice().iter().all(|v| (-1.0..=1.0).contains(v)));
            shapes.insert((a.data.height(), a.data.width()));
        }
        assert_eq!(
            shapes.into_iter().collect::<Vec<_>>(),
            vec![(24, 48), (48, 48), (72, 72)]
        );
    }

    #[test]
    fn unposed_target_matches_first_reference_subject() {
        // Unsegmented, unposed, single-view samples differ from the reference
        // panel only where the backgrounds differ.
        let ds = MosaicDataset {
            single_view_prob: 1.0,
            segment_prob: 0.0,
            pose_prob: 0.0,
            grids: vec![(1, 2, 1.0)],
            ..MosaicDataset::standard(24)
        };
        let s = preview_sample(&ds, 1, 0).unwrap();
        assert!(!s.cond.pose);
        let row = |r: usize, c: usize| s.data.get(r, c, 0);
        let differing = (0..24)
            .flat_map(|r| (0..24).map(move |c| (r, c)))
            .filter(|&(r, c)| row(r, c) != row(r, c + 24))
            .count();
        assert!(differing < 24 * 24);
    }

    #[test]
    fn validation_rejects_degenerate_configs() {
        let mut ds = MosaicDataset::standard(24);
        ds.grids = vec![(1, 1, 1.0)];
        assert!(ds.validate().is_err());
        ds.grids = vec![];
        assert!(ds.validate().is_err());
        let empty = MosaicDataset {
            subjects: vec![],
            ..MosaicDataset::standard(24)
        };
        assert!(empty.validate().is_err());
    }

    #[test]
    fn train_and_eval_subjects_are_disjoint_streams() {
        let train = train_subjects(TRAIN_SUBJECTS);
        let eval = eval_subjects(EVAL_SUBJECTS);
        assert!(eval.iter().all(|e| !train.contains(e)));
    }
}
