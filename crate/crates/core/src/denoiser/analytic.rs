//! Exact velocity fields for Gaussian data under the linear noise-to-data path
//! `x_t = (1 - t) x0 + t x1`, `x0 ~ N(0, I)`.
//!
//! For `x1 ~ N(mu, Sigma)` the field is
//! `v(x, t) = mu + (t Sigma - (1 - t) I) S^-1 (x - t mu)` with
//! `S = (1 - t)^2 I + t^2 Sigma`.

use crate::condition::Condition;
use crate::error::{Error, Result};
use crate::grid::Latent;
use crate::sampler::{Denoiser, StepContext};

fn check_t(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid(format!("t = {t} outside [0, 1]")));
    }
    Ok(())
}

/// Isotropic case `Sigma = variance * I`.
pub fn isotropic_velocity(mean: &[f64], variance: f64, x: &[f64], t: f64) -> Result<Vec<f64>> {
    check_t(t)?;
    if mean.len() != x.len() {
        return Err(Error::shape(format!(
            "mean has {} entries, state {}",
            mean.len(),
            x.len()
        )));
    }
    if !(variance >= 0.0) {
        return Err(Error::invalid(format!("variance must be >= 0, got {variance}")));
    }
    let s2 = (1.0 - t).powi(2) + t * t * variance;
    if s2 <= 0.0 {
        return Err(Error::invalid("velocity is singular at t = 1 with zero variance"));
    }
    let gain = (t * variance - (1.0 - t)) / s2;
    Ok(mean.iter().zip(x).map(|(&m, &xi)| m + gain * (xi - t * m)).collect())
}

/// General case; `cov` is `d x d` row-major and must be symmetric positive
/// semi-definite.
pub fn gaussian_velocity(mean: &[f64], cov: &[f64], x: &[f64], t: f64) -> Result<Vec<f64>> {
    check_t(t)?;
    let d = mean.len();
    if x.len() != d || cov.len() != d * d {
        return Err(Error::shape(format!(
            "mean {d}, covariance {} and state {} disagree",
            cov.len(),
            x.len()
        )));
    }
    let mut s = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            s[i * d + j] = t * t * cov[i * d + j] + if i == j { (1.0 - t).powi(2) } else { 0.0 };
        }
    }
    let r: Vec<f64> = x.iter().zip(mean).map(|(&xi, &m)| xi - t * m).collect();
    let y = solve_spd(&mut s, r, d)?;
    Ok((0..d)
        .map(|i| {
            let cy: f64 = (0..d).map(|j| cov[i * d + j] * y[j]).sum();
            mean[i] + t * cy - (1.0 - t) * y[i]
        })
        .collect())
}

/// Cholesky solve of `a y = b`; `a` is overwritten.
fn solve_spd(a: &mut [f64], mut b: Vec<f64>, d: usize) -> Result<Vec<f64>> {
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= a[j * d + k] * a[j * d + k];
        }
        if diag <= 1e-300 {
            return Err(Error::invalid(
                "velocity is singular: covariance is degenerate at t = 1",
            ));
        }
        let l = diag.sqrt();
        a[j * d + j] = l;
        for i in j + 1..d {
            let mut v = a[i * d + j];
            for k in 0..j {
                v -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = v / l;
        }
    }
    for i in 0..d {
        for k in 0..i {
            b[i] -= a[i * d + k] * b[k];
        }
        b[i] /= a[i * d + i];
    }
    for i in (0..d).rev() {
        for k in i + 1..d {
            b[i] -= a[k * d + i] * b[k];
        }
        b[i] /= a[i * d + i];
    }
    Ok(b)
}

/// `N(mean, variance I)` over latents of one fixed shape. An optional second
/// mean is used for the null condition so that guidance has an effect.
#[derive(Clone, Debug)]
pub struct IsotropicGaussian {
    mean: Latent,
    variance: f32,
    null_mean: Option<Latent>,
}

impl IsotropicGaussian {
    pub fn new(mean: Latent, variance: f32) -> Result<Self> {
        if !(variance >= 0.0 && variance.is_finite()) {
            return Err(Error::invalid(format!(
                "variance must be finite and >= 0, got {variance}"
            )));
        }
        Ok(Self {
            mean,
            variance,
            null_mean: None,
        })
    }

    pub fn with_null_mean(mut self, null_mean: Latent) -> Result<Self> {
        self.mean.ensure_same_shape(&null_mean, "null mean")?;
        self.null_mean = Some(null_mean);
        Ok(self)
    }

    pub fn mean(&self) -> &Latent {
        &self.mean
    }

    pub fn variance(&self) -> f32 {
        self.variance
    }
}

impl Denoiser for IsotropicGaussian {
    fn velocity(&self, state: &Latent, cond: &Condition, t: f32, _: &StepContext<'_>) -> Result<Latent> {
        let mean = match (&self.null_mean, cond.is_null()) {
            (Some(m), true) => m,
            _ => &self.mean,
        };
        mean.ensure_same_shape(state, "state")?;
        let m: Vec<f64> = mean.as_slice().iter().map(|&v| v as f64).collect();
        let x: Vec<f64> = state.as_slice().iter().map(|&v| v as f64).collect();
        let v = isotropic_velocity(&m, self.variance as f64, &x, t as f64)?;
        let (h, w, c) = state.shape();
        Ok(Latent::from_raw(h, w, c, v.into_iter().map(|v| v as f32).collect()))
    }
}

/// `N(mean, cov)` over the flattened latent; intended for small shapes.
#[derive(Clone, Debug)]
pub struct CorrelatedGaussian {
    shape: (usize, usize, usize),
    mean: Vec<f64>,
    cov: Vec<f64>,
}

impl CorrelatedGaussian {
    pub fn new(shape: (usize, usize, usize), mean: Vec<f64>, cov: Vec<f64>) -> Result<Self> {
        let d = shape.0 * shape.1 * shape.2;
        if mean.len() != d || cov.len() != d * d {
            return Err(Error::shape(format!(
                "shape holds {d} values; mean {} cov {}",
                mean.len(),
                cov.len()
            )));
        }
        for i in 0..d {
            for j in 0..i {
                if (cov[i * d + j] - cov[j * d + i]).abs() > 1e-12 {
                    return Err(Error::invalid("covariance is not symmetric"));
                }
            }
        }
        Ok(Self { shape, mean, cov })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn cov(&self) -> &[f64] {
        &self.cov
    }
}

impl Denoiser for CorrelatedGaussian {
    fn velocity(&self, state: &Latent, _: &Condition, t: f32, _: &StepContext<'_>) -> Result<Latent> {
        if state.shape() != self.shape {
            return Err(Error::shape(format!(
                "state {:?}, model {:?}",
                state.shape(),
                self.shape
            )));
        }
        let x: Vec<f64> = state.as_slice().iter().map(|&v| v as f64).collect();
        let v = gaussian_velocity(&self.mean, &self.cov, &x, t as f64)?;
        let (h, w, c) = self.shape;
        Ok(Latent::from_raw(h, w, c, v.into_iter().map(|v| v as f32).collect()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn endpoints() {
        let v = isotropic_velocity(&[0.5, -1.0], 0.3, &[2.0, 1.0], 0.0).unwrap();
        assert_eq!(v, vec![0.5 - 2.0, -1.0 - 1.0]);
        let v = isotropic_velocity(&[0.5], 0.3, &[2.0], 1.0).unwrap();
        assert!((v[0] - 2.0).abs() < 1e-12);
        assert!(isotropic_velocity(&[0.5], 0.0, &[2.0], 1.0).is_err());
        assert!(isotropic_velocity(&[0.5], 0.3, &[2.0], 1.1).is_err());
    }

    #[test]
    fn full_covariance_reduces_to_isotropic() {
        let mean = [0.2, -0.4, 0.9];
        let cov = [0.3, 0.0, 0.0, 0.0, 0.3, 0.0, 0.0, 0.0, 0.3];
        let x = [1.0, 0.5, -2.0];
        for &t in &[0.0, 0.3, 0.77, 1.0] {
            let a = isotropic_velocity(&mean, 0.3, &x, t).unwrap();
            let b = gaussian_velocity(&mean, &cov, &x, t).unwrap();
            assert!(a.iter().zip(&b).all(|(p, q)| (p - q).abs() < 1e-12));
        }
    }

    /// Monte-Carlo estimate of `E[x1 - x0 | x_t]` from path samples whose
    /// `x_t` falls in a narrow bin.
    #[test]
    fn matches_binned_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &(t, x) in &[(0.3f64, 0.4f64), (0.6, -0.5), (0.9, 1.0)] {
            let half = 0.01;
            let mut vals = Vec::new();
            for _ in 0..1_000_000 {
                let z0: f64 = StandardNormal.sample(&mut rng);
                let x1: f64 = StandardNormal.sample(&mut rng);
                let xt = (1.0 - t) * z0 + t * x1;
                if (xt - x).abs() < half {
                    vals.push(x1 - z0);
                }
            }
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let got = isotropic_velocity(&[0.0], 1.0, &[x], t).unwrap()[0];
            // Bin-width bias is below slope * half.
            let slack = 3.0 * sd / n.sqrt() + 2.0 * half;
            assert!((mean - got).abs() < slack, "t={t} x={x}: mc {mean} vs {got}");
        }
    }

    fn assert_affine(f: impl Fn(&[f64]) -> Vec<f64>) {
        let (a, b) = ([1.0, -2.0], [0.5, 3.0]);
        for &alpha in &[0.2, 0.7, 1.5] {
            let mix: Vec<f64> = a.iter().zip(&b).map(|(p, q)| alpha * p + (1.0 - alpha) * q).collect();
            let (lhs, va, vb) = (f(&mix), f(&a), f(&b));
            for k in 0..2 {
                assert!((lhs[k] - (alpha * va[k] + (1.0 - alpha) * vb[k])).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn velocity_is_affine_in_state() {
        let mean = [0.3, -0.2];
        let cov = [0.4, 0.1, 0.1, 0.2];
        for &t in &[0.0, 0.25, 0.8] {
            assert_affine(|x| isotropic_velocity(&mean, 0.3, x, t).unwrap());
            assert_affine(|x| gaussian_velocity(&mean, &cov, x, t).unwrap());
        }
    }

    #[test]
    fn fine_euler_lands_in_target() {
        let mean = [0.6, -0.3];
        let cov = [0.5, 0.2, 0.2, 0.3];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let steps = 500;
        let n = 4000;
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let mut x: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
            for i in 0..steps {
                let t = i as f64 / steps as f64;
                let v = gaussian_velocity(&mean, &cov, &x, t).unwrap();
                x.iter_mut().zip(&v).for_each(|(a, b)| *a += b / steps as f64);
            }
            samples.push(x);
        }
        let nf = n as f64;
        let m: Vec<f64> = (0..2).map(|k| samples.iter().map(|s| s[k]).sum::<f64>() / nf).collect();
        for k in 0..2 {
            assert!((m[k] - mean[k]).abs() < 3.0 * (cov[k * 2 + k] / nf).sqrt());
        }
        for a in 0..2 {
            for b in 0..2 {
                let c = samples.iter().map(|s| (s[a] - m[a]) * (s[b] - m[b])).sum::<f64>() / (nf - 1.0);
                assert!((c - cov[a * 2 + b]).abs() < 0.03, "cov[{a}{b}] = {c}");
            }
        }
    }

    #[test]
    fn denoiser_uses_null_mean_for_null_condition() {
        let mask = crate::grid::PanelMask::ones(1, 1);
        let ctx = StepContext {
            step: 0,
            mask: &mask,
            cascade_levels: 0,
        };
        let g = IsotropicGaussian::new(Latent::filled(1, 1, 1, 1.0).unwrap(), 0.5)
            .unwrap()
            .with_null_mean(Latent::filled(1, 1, 1, -1.0).unwrap())
            .unwrap();
        let x = Latent::zeros(1, 1, 1).unwrap();
        let c = g.velocity(&x, &Condition::default(), 0.0, &ctx).unwrap();
        let u = g.velocity(&x, &Condition::null(), 0.0, &ctx).unwrap();
        assert_eq!(c.as_slice(), &[1.0]);
        assert_eq!(u.as_slice(), &[-1.0]);
    }
}
