//! Structured conditioning: the toy stand-in for a text prompt.

use crate::synth::{BackgroundClass, ShapeClass, SubjectSpec};

/// Width of [`Condition::features`].
pub const COND_DIM: usize = 17;

/// Subject attributes plus an edit descriptor. Any field may be absent; the
/// null condition (used for guidance) has every field cleared.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Condition {
    pub shape: Option<ShapeClass>,
    /// Degrees.
    pub hue: Option<f32>,
    /// Stripe frequency; `Some(0.0)` states "untextured".
    pub texture: Option<f32>,
    pub background: Option<BackgroundClass>,
    pub pose: bool,
    null: bool,
}

impl Condition {
    pub fn null() -> Self {
        Self {
            null: true,
            ..Self::default()
        }
    }

    pub fn is_null(&self) -> bool {
        self.null
    }

    /// Edit descriptor only, no subject description.
    pub fn edit(background: BackgroundClass, pose: bool) -> Self {
        Self {
            background: Some(background),
            pose,
            ..Self::default()
        }
    }

    /// Edit descriptor plus the full subject description.
    pub fn described(spec: &SubjectSpec, background: BackgroundClass, pose: bool) -> Self {
        Self {
            shape: Some(spec.shape),
            hue: Some(spec.hue),
            texture: Some(spec.texture.map_or(0.0, |t| t.frequency)),
            background: Some(background),
            pose,
            null: false,
        }
    }

    pub fn without_subject(self) -> Self {
        Self {
            shape: None,
            hue: None,
            texture: None,
            ..self
        }
    }

    pub fn has_subject(&self) -> bool {
        self.shape.is_some() || self.hue.is_some() || self.texture.is_some()
    }

    /// Fixed-width encoding fed to the denoiser:
    /// `[shape one-hot x6, cos hue, sin hue, hue present, texture, subject present,
    ///   background one-hot x4, pose, null]`.
    pub fn features(&self) -> [f32; COND_DIM] {
        let mut f = [0.0f32; COND_DIM];
        if self.null {
            f[COND_DIM - 1] = 1.0;
            return f;
        }
        if let Some(s) = self.shape {
            f[s.index()] = 1.0;
        }
        if let Some(h) = self.hue {
            let r = h.to_radians();
            f[6] = r.cos();
            f[7] = r.sin();
            f[8] = 1.0;
        }
        if let Some(t) = self.texture {
            f[9] = t / 4.0;
        }
        f[10] = if self.has_subject() { 1.0 } else { 0.0 };
        if let Some(b) = self.background {
            f[11 + b.index()] = 1.0;
        }
        f[15] = if self.pose { 1.0 } else { 0.0 };
        f
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::sample_spec;

    #[test]
    fn null_condition_only_sets_flag() {
        let f = Condition::null().features();
        assert_eq!(f[..COND_DIM - 1], [0.0; COND_DIM - 1]);
        assert_eq!(f[COND_DIM - 1], 1.0);
    }

    #[test]
    fn described_condition_encodes_every_field() {
        let spec = sample_spec(3);
        let c = Condition::described(&spec, BackgroundClass::Checker, true);
        let f = c.features();
        assert_eq!(f[spec.shape.index()], 1.0);
        assert_eq!(f[11 + BackgroundClass::Checker.index()], 1.0);
        assert_eq!(f[15], 1.0);
        assert_eq!(f[10], 1.0);
        let plain = c.without_subject().features();
        assert_eq!(plain[..11], [0.0; 11]);
    }
}
