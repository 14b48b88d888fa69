//! Masked flow-matching completion of a mosaic.
//!
//! Time runs from noise (`t = 0`) to data (`t = 1`). At every step the
//! unmasked region is reset to the mosaic blended with the initial noise at
//! the current noise level, and the whole state is advanced by one explicit
//! Euler step of a guided velocity field.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::condition::Condition;
use crate::error::{Error, Result};
use crate::grid::{self, Latent, MosaicLayout, PanelMask, Rect};

pub const DEFAULT_STEPS: usize = 28;
pub const DEFAULT_GUIDANCE: f32 = 7.0;
pub const DEFAULT_CASCADE_LEVELS: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct Schedule {
    times: Vec<f32>,
    step_size: f32,
}

impl Schedule {
    /// `times[i] = i / (steps - 1)`, step size `1 / steps`.
    pub fn new(steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::invalid(format!("need at least 2 steps, got {steps}")));
        }
        let last = (steps - 1) as f64;
        let times = (0..steps).map(|i| (i as f64 / last) as f32).collect();
        Ok(Self {
            times,
            step_size: (1.0 / steps as f64) as f32,
        })
    }

    pub fn steps(&self) -> usize {
        self.times.len()
    }

    pub fn times(&self) -> &[f32] {
        &self.times
    }

    pub fn step_size(&self) -> f32 {
        self.step_size
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub guidance: f32,
    pub seed: u64,
    /// Restore the unmasked region from the mosaic after the last step.
    pub final_blend: bool,
    /// Cascade depth handed to the denoiser; 0 and 1 both disable it.
    pub cascade_levels: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: DEFAULT_STEPS,
            guidance: DEFAULT_GUIDANCE,
            seed: 0,
            final_blend: true,
            cascade_levels: DEFAULT_CASCADE_LEVELS,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::invalid(format!("steps must be >= 2, got {}", self.steps)));
        }
        if !(self.guidance >= 0.0 && self.guidance.is_finite()) {
            return Err(Error::invalid(format!("guidance must be >= 0, got {}", self.guidance)));
        }
        Ok(())
    }
}

/// Per-call information a denoiser may use beyond the state itself.
#[derive(Clone, Copy, Debug)]
pub struct StepContext<'a> {
    pub step: usize,
    /// Region being synthesized; lets attention hooks find target tokens.
    pub mask: &'a PanelMask,
    pub cascade_levels: usize,
}

/// A velocity field `v(x, cond, t)` with `t = 0` noise and `t = 1` data.
/// Implementations must be usable from several threads at once.
pub trait Denoiser: Sync {
    fn velocity(&self, state: &Latent, cond: &Condition, t: f32, ctx: &StepContext<'_>) -> Result<Latent>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn velocity(&self, state: &Latent, cond: &Condition, t: f32, ctx: &StepContext<'_>) -> Result<Latent> {
        (**self).velocity(state, cond, t, ctx)
    }
}

/// `(1 - t) * x0 + t * mosaic`.
pub fn noise_blend(x0: &Latent, mosaic: &Latent, t: f32) -> Result<Latent> {
    x0.ensure_same_shape(mosaic, "noise_blend")?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("t = {t} outside [0, 1]")));
    }
    let keep = 1.0 - t;
    let data = x0
        .as_slice()
        .iter()
        .zip(mosaic.as_slice())
        .map(|(&a, &b)| keep * a + t * b)
        .collect();
    let (h, w, c) = x0.shape();
    Ok(Latent::from_raw(h, w, c, data))
}

/// Takes `x` where the mask is set and `noised` elsewhere, per channel.
pub fn apply_mask(x: &Latent, noised: &Latent, mask: &PanelMask) -> Result<Latent> {
    x.ensure_same_shape(noised, "apply_mask")?;
    if mask.height() != x.height() || mask.width() != x.width() {
        return Err(Error::shape(format!(
            "mask {}x{} vs latent {}x{}",
            mask.height(),
            mask.width(),
            x.height(),
            x.width()
        )));
    }
    let ch = x.channels();
    let mut out = noised.clone();
    for (p, &bit) in mask.bits().iter().enumerate() {
        if bit == 1 {
            out.data_mut()[p * ch..(p + 1) * ch].copy_from_slice(&x.as_slice()[p * ch..(p + 1) * ch]);
        }
    }
    Ok(out)
}

/// Classifier-free guidance: `v_null + g * (v_cond - v_null)`. The end points
/// `g = 0` and `g = 1` return the single underlying evaluation unchanged.
pub fn guided_velocity<D: Denoiser + ?Sized>(
    denoiser: &D,
    x: &Latent,
    cond: &Condition,
    t: f32,
    guidance: f32,
    ctx: &StepContext<'_>,
) -> Result<Latent> {
    let checked = |v: Latent| -> Result<Latent> {
        x.ensure_same_shape(&v, "denoiser output")?;
        Ok(v)
    };
    if guidance == 1.0 || cond.is_null() {
        return checked(denoiser.velocity(x, cond, t, ctx)?);
    }
    let v_null = checked(denoiser.velocity(x, &Condition::null(), t, ctx)?)?;
    if guidance == 0.0 {
        return Ok(v_null);
    }
    let v_cond = checked(denoiser.velocity(x, cond, t, ctx)?)?;
    let data = v_null
        .as_slice()
        .iter()
        .zip(v_cond.as_slice())
        .map(|(&u, &c)| u + guidance * (c - u))
        .collect();
    let (h, w, c) = x.shape();
    Ok(Latent::from_raw(h, w, c, data))
}

/// Standard-normal latent drawn from a ChaCha8 stream seeded with `seed`.
pub fn gaussian_noise(height: usize, width: usize, channels: usize, seed: u64) -> Latent {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..height * width * channels)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    Latent::from_raw(height, width, channels, data)
}

/// What an observer sees after each step.
pub struct StepState<'a> {
    pub step: usize,
    pub t: f32,
    /// Masked input to the denoiser.
    pub x_hat: &'a Latent,
    /// State after the Euler update.
    pub next: &'a Latent,
}

pub fn complete<D: Denoiser + ?Sized>(
    mosaic: &Latent,
    mask: &PanelMask,
    denoiser: &D,
    cond: &Condition,
    config: &SamplerConfig,
) -> Result<Latent> {
    complete_observed(mosaic, mask, denoiser, cond, config, &mut |_| Ok(()))
}

/// [`complete`] with a callback after every step (state dumps, attention capture).
pub fn complete_observed<D: Denoiser + ?Sized>(
    mosaic: &Latent,
    mask: &PanelMask,
    denoiser: &D,
    cond: &Condition,
    config: &SamplerConfig,
    observer: &mut dyn FnMut(&StepState<'_>) -> Result<()>,
) -> Result<Latent> {
    config.validate()?;
    if mask.height() != mosaic.height() || mask.width() != mosaic.width() {
        return Err(Error::shape("mask does not cover the mosaic"));
    }
    let schedule = Schedule::new(config.steps)?;
    let dt = schedule.step_size();
    let (h, w, c) = mosaic.shape();
    let x0 = gaussian_noise(h, w, c, config.seed);
    let mut x = x0.clone();

    for (step, &t) in schedule.times().iter().enumerate() {
        let noised = noise_blend(&x0, mosaic, t)?;
        let x_hat = apply_mask(&x, &noised, mask)?;
        let ctx = StepContext {
            step,
            mask,
            cascade_levels: config.cascade_levels,
        };
        let v = guided_velocity(denoiser, &x_hat, cond, t, config.guidance, &ctx)?;
        let data: Vec<f32> = x_hat
            .as_slice()
            .iter()
            .zip(v.as_slice())
            .map(|(&a, &b)| a + dt * b)
            .collect();
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                step,
                detail: format!("element {i} after Euler update at t = {t}"),
            });
        }
        let next = Latent::from_raw(h, w, c, data);
        observer(&StepState {
            step,
            t,
            x_hat: &x_hat,
            next: &next,
        })?;
        x = next;
    }

    if config.final_blend {
        apply_mask(&x, mosaic, mask)
    } else {
        Ok(x)
    }
}

/// Region edit: the target panel holds `scene` instead of the zero
/// placeholder, and only `rect` (panel-local) is synthesized. Returns the
/// full mosaic.
pub fn complete_region<D: Denoiser + ?Sized>(
    scene: &Latent,
    layout: &MosaicLayout,
    rect: Rect,
    references: &[Latent],
    denoiser: &D,
    cond: &Condition,
    config: &SamplerConfig,
) -> Result<Latent> {
    let mask = grid::region_mask(layout, rect)?;
    let mosaic = grid::unfold(references, layout)?;
    let (tr, tc) = layout.target();
    let mosaic = grid::insert_panel(&mosaic, layout, tr, tc, scene)?;
    complete(&mosaic, &mask, denoiser, cond, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{target_mask, unfold};
    use proptest::prelude::*;

    fn lat(v: &[f32]) -> Latent {
        Latent::new(1, v.len(), 1, v.to_vec()).unwrap()
    }

    /// Returns `a * x + b` everywhere; ignores the condition unless it is null,
    /// in which case it returns `x`.
    struct Affine {
        a: f32,
        b: f32,
    }

    impl Denoiser for Affine {
        fn velocity(&self, x: &Latent, cond: &Condition, _t: f32, _: &StepContext<'_>) -> Result<Latent> {
            let (h, w, c) = x.shape();
            let data = if cond.is_null() {
                x.as_slice().to_vec()
            } else {
                x.as_slice().iter().map(|v| self.a * v + self.b).collect()
            };
            Ok(Latent::from_raw(h, w, c, data))
        }
    }

    struct Constant(f32, f32);

    impl Denoiser for Constant {
        fn velocity(&self, x: &Latent, cond: &Condition, _t: f32, _: &StepContext<'_>) -> Result<Latent> {
            let v = if cond.is_null() { self.0 } else { self.1 };
            let (h, w, c) = x.shape();
            Ok(Latent::from_raw(h, w, c, vec![v; x.len()]))
        }
    }

    struct Exploding;

    impl Denoiser for Exploding {
        fn velocity(&self, x: &Latent, _: &Condition, t: f32, _: &StepContext<'_>) -> Result<Latent> {
            let (h, w, c) = x.shape();
            let v = if t > 0.5 { f32::INFINITY } else { 0.0 };
            Ok(Latent::from_raw(h, w, c, vec![v; x.len()]))
        }
    }

    fn ctx(mask: &PanelMask) -> StepContext<'_> {
        StepContext {
            step: 0,
            mask,
            cascade_levels: 0,
        }
    }

    #[test]
    fn schedule_endpoints_and_step() {
        for steps in [2, 5, 28] {
            let s = Schedule::new(steps).unwrap();
            assert_eq!(s.times()[0], 0.0);
            assert_eq!(*s.times().last().unwrap(), 1.0);
            assert_eq!(s.step_size(), 1.0 / steps as f32);
            assert!(s.times().windows(2).all(|w| w[0] < w[1]));
        }
        assert!(Schedule::new(1).is_err());
    }

    #[test]
    fn blend_endpoints_and_midpoint() {
        let x0 = lat(&[0.3, -1.7]);
        let l = lat(&[4.0, 2.5]);
        assert_eq!(noise_blend(&x0, &l, 0.0).unwrap(), x0);
        assert_eq!(noise_blend(&x0, &l, 1.0).unwrap(), l);
        assert_eq!(noise_blend(&lat(&[0.0]), &lat(&[4.0]), 0.5).unwrap(), lat(&[2.0]));
        assert!(noise_blend(&x0, &l, 1.5).is_err());
        assert!(noise_blend(&x0, &l, -0.1).is_err());
        assert!(noise_blend(&x0, &lat(&[1.0]), 0.5).is_err());
    }

    #[test]
    fn mask_selects_per_position() {
        let x = lat(&[7.0, 7.0]);
        let lt = lat(&[3.0, 3.0]);
        let m = PanelMask::new(1, 2, vec![1, 0]).unwrap();
        assert_eq!(apply_mask(&x, &lt, &m).unwrap(), lat(&[7.0, 3.0]));
        assert_eq!(apply_mask(&x, &lt, &PanelMask::ones(1, 2)).unwrap(), x);
        assert_eq!(apply_mask(&x, &lt, &PanelMask::zeros(1, 2)).unwrap(), lt);
        assert!(apply_mask(&x, &lt, &PanelMask::ones(2, 1)).is_err());
    }

    #[test]
    fn guidance_formula() {
        let m = PanelMask::ones(1, 1);
        let x = lat(&[0.0]);
        let cond = Condition::default();
        let d = Constant(1.0, 3.0);
        let g = |s| guided_velocity(&d, &x, &cond, 0.2, s, &ctx(&m)).unwrap().as_slice()[0];
        assert_eq!(g(7.0), 15.0);
        assert_eq!(g(1.0), 3.0);
        assert_eq!(g(0.0), 1.0);
    }

    #[test]
    fn fully_unmasked_completion_returns_mosaic() {
        let l = lat(&[1.0, -2.0, 0.5]);
        let out = complete(
            &l,
            &PanelMask::zeros(1, 3),
            &Affine { a: 3.0, b: 9.0 },
            &Condition::default(),
            &SamplerConfig::default(),
        )
        .unwrap();
        assert_eq!(out, l);
    }

    #[test]
    fn literal_mode_returns_raw_state() {
        let l = lat(&[1.0, -2.0]);
        let cfg = SamplerConfig {
            final_blend: false,
            steps: 4,
            guidance: 1.0,
            ..SamplerConfig::default()
        };
        let out = complete(
            &l,
            &PanelMask::zeros(1, 2),
            &Affine { a: 0.0, b: 1.0 },
            &Condition::default(),
            &cfg,
        )
        .unwrap();
        // Last masked input is L itself (t = 1); one more Euler step of v = 1.
        assert_eq!(out, lat(&[1.25, -1.75]));
    }

    #[test]
    fn non_finite_step_reported() {
        let l = lat(&[0.0, 1.0]);
        let cfg = SamplerConfig {
            steps: 5,
            guidance: 1.0,
            ..SamplerConfig::default()
        };
        match complete(&l, &PanelMask::ones(1, 2), &Exploding, &Condition::default(), &cfg) {
            Err(Error::NonFinite { step, .. }) => assert_eq!(step, 3),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let l = lat(&[0.0]);
        let m = PanelMask::ones(1, 1);
        let d = Constant(0.0, 0.0);
        for cfg in [
            SamplerConfig {
                steps: 1,
                ..SamplerConfig::default()
            },
            SamplerConfig {
                guidance: -1.0,
                ..SamplerConfig::default()
            },
        ] {
            assert!(complete(&l, &m, &d, &Condition::default(), &cfg).is_err());
        }
    }

    #[test]
    fn completion_is_deterministic_and_seed_dependent() {
        let layout = MosaicLayout::single_view(2, 2, 2, 2, (0, 0)).unwrap();
        let r = Latent::new(2, 2, 3, (0..12).map(|v| v as f32 / 6.0 - 1.0).collect()).unwrap();
        let l = unfold(&[r], &layout).unwrap();
        let m = target_mask(&layout);
        let d = Affine { a: -0.5, b: 0.2 };
        let cfg = SamplerConfig {
            seed: 11,
            ..SamplerConfig::default()
        };
        let a = complete(&l, &m, &d, &Condition::default(), &cfg).unwrap();
        let b = complete(&l, &m, &d, &Condition::default(), &cfg).unwrap();
        assert_eq!(a, b);
        let c = complete(&l, &m, &d, &Condition::default(), &SamplerConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn guidance_one_equals_conditional_sampling() {
        // With g = 1 the sampler never queries the null branch, so a denoiser
        // that only answers the conditional branch yields the same result.
        struct CondOnly;
        impl Denoiser for CondOnly {
            fn velocity(&self, x: &Latent, cond: &Condition, t: f32, _: &StepContext<'_>) -> Result<Latent> {
                assert!(!cond.is_null());
                let (h, w, c) = x.shape();
                Ok(Latent::from_raw(
                    h,
                    w,
                    c,
                    x.as_slice().iter().map(|v| 0.3 - v * t).collect(),
                ))
            }
        }
        let l = lat(&[0.0, 2.0]);
        let m = PanelMask::new(1, 2, vec![1, 0]).unwrap();
        let cfg = SamplerConfig {
            guidance: 1.0,
            ..SamplerConfig::default()
        };
        let a = complete(&l, &m, &CondOnly, &Condition::default(), &cfg).unwrap();
        let b = complete(&l, &m, &CondOnly, &Condition::default(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn region_edit_preserves_scene_outside_rect() {
        let layout = MosaicLayout::single_view(1, 2, 4, 4, (0, 0)).unwrap();
        let r = Latent::filled(4, 4, 3, 0.5).unwrap();
        let scene = Latent::new(4, 4, 3, (0..48).map(|v| (v as f32).sin()).collect()).unwrap();
        let rect = Rect::new(1, 1, 2, 2);
        let out = complete_region(
            &scene,
            &layout,
            rect,
            &[r],
            &Affine { a: -1.0, b: 0.0 },
            &Condition::default(),
            &SamplerConfig::default(),
        )
        .unwrap();
        let panel = grid::extract_panel(&out, &layout, 0, 0).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let inside = (1..3).contains(&y) && (1..3).contains(&x);
                for c in 0..3 {
                    if !inside {
                        assert_eq!(panel.get(y, x, c), scene.get(y, x, c));
                    }
                }
            }
        }
        assert!(complete_region(
            &scene,
            &layout,
            Rect::new(0, 0, 0, 2),
            std::slice::from_ref(&scene),
            &Affine { a: 0.0, b: 0.0 },
            &Condition::default(),
            &SamplerConfig::default()
        )
        .is_err());
    }

    #[test]
    fn full_rect_region_edit_equals_plain_completion() {
        let layout = MosaicLayout::single_view(2, 2, 3, 3, (0, 0)).unwrap();
        let r = Latent::new(3, 3, 3, (0..27).map(|v| (v as f32 * 0.37).cos()).collect()).unwrap();
        let scene = Latent::filled(3, 3, 3, -0.25).unwrap();
        let d = Affine { a: -0.7, b: 0.1 };
        let cfg = SamplerConfig {
            seed: 5,
            ..SamplerConfig::default()
        };
        let region = complete_region(
            &scene,
            &layout,
            Rect::new(0, 0, 3, 3),
            std::slice::from_ref(&r),
            &d,
            &Condition::default(),
            &cfg,
        )
        .unwrap();
        let mosaic = unfold(&[r], &layout).unwrap();
        let plain = complete(&mosaic, &target_mask(&layout), &d, &Condition::default(), &cfg).unwrap();
        assert_eq!(region, plain);
    }

    proptest! {
        #[test]
        fn blend_is_homogeneous(
            vals in proptest::collection::vec((-10.0f32..10.0, -10.0f32..10.0), 1..16),
            scale in -4.0f32..4.0,
            t in 0.0f32..=1.0,
        ) {
            let x0 = lat(&vals.iter().map(|v| v.0).collect::<Vec<_>>());
            let l = lat(&vals.iter().map(|v| v.1).collect::<Vec<_>>());
            let scaled = |x: &Latent| lat(&x.as_slice().iter().map(|v| v * scale).collect::<Vec<_>>());
            let lhs = noise_blend(&scaled(&x0), &scaled(&l), t).unwrap();
            let rhs = noise_blend(&x0, &l, t).unwrap();
            for (a, b) in lhs.as_slice().iter().zip(rhs.as_slice()) {
                prop_assert!((a - scale * b).abs() <= 1e-4 * (1.0 + b.abs() * scale.abs()));
            }
        }

        #[test]
        fn mask_is_idempotent(
            vals in proptest::collection::vec((-5.0f32..5.0, -5.0f32..5.0, 0u8..2), 1..16),
        ) {
            let x = lat(&vals.iter().map(|v| v.0).collect::<Vec<_>>());
            let lt = lat(&vals.iter().map(|v| v.1).collect::<Vec<_>>());
            let m = PanelMask::new(1, vals.len(), vals.iter().map(|v| v.2).collect()).unwrap();
            let once = apply_mask(&x, &lt, &m).unwrap();
            prop_assert_eq!(apply_mask(&once, &lt, &m).unwrap(), once);
        }

        #[test]
        fn final_blend_preserves_unmasked(
            seed in any::<u64>(),
            bits in proptest::collection::vec(0u8..2, 6),
            a in -2.0f32..2.0,
        ) {
            let l = Latent::new(2, 3, 2, (0..12).map(|v| v as f32 * 0.1).collect()).unwrap();
            let m = PanelMask::new(2, 3, bits).unwrap();
            let cfg = SamplerConfig { seed, steps: 6, ..SamplerConfig::default() };
            let out = complete(&l, &m, &Affine { a, b: 0.3 }, &Condition::default(), &cfg).unwrap();
            for p in 0..6 {
                if m.bits()[p] == 0 {
                    prop_assert_eq!(&out.as_slice()[p * 2..p * 2 + 2], &l.as_slice()[p * 2..p * 2 + 2]);
                }
            }
        }
    }
}
