use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShapeClass {
    Circle,
    Square,
    Triangle,
    Star,
    Cross,
    Ring,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 6] = [
        ShapeClass::Circle,
        ShapeClass::Square,
        ShapeClass::Triangle,
        ShapeClass::Star,
        ShapeClass::Cross,
        ShapeClass::Ring,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Circle => "circle",
            ShapeClass::Square => "square",
            ShapeClass::Triangle => "triangle",
            ShapeClass::Star => "star",
            ShapeClass::Cross => "cross",
            ShapeClass::Ring => "ring",
        }
    }

    /// Rotational symmetry order, used to bound the silhouette search.
    pub fn symmetry(self) -> u32 {
        match self {
            ShapeClass::Circle | ShapeClass::Ring => 360,
            ShapeClass::Square | ShapeClass::Cross => 4,
            ShapeClass::Triangle => 3,
            ShapeClass::Star => 5,
        }
    }
}

impl fmt::Display for ShapeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShapeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShapeClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown shape class `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BackgroundClass {
    Plain,
    Gradient,
    NoiseField,
    Checker,
}

impl BackgroundClass {
    pub const ALL: [BackgroundClass; 4] = [
        BackgroundClass::Plain,
        BackgroundClass::Gradient,
        BackgroundClass::NoiseField,
        BackgroundClass::Checker,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            BackgroundClass::Plain => "plain",
            BackgroundClass::Gradient => "gradient",
            BackgroundClass::NoiseField => "noise",
            BackgroundClass::Checker => "checker",
        }
    }
}

impl fmt::Display for BackgroundClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BackgroundClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BackgroundClass::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown background class `{s}`")))
    }
}

/// Stripe pattern in the subject's own frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Texture {
    /// Full stripe cycles across the subject's diameter.
    pub frequency: f32,
    /// Stripe direction in degrees, [0, 180).
    pub angle: f32,
}

pub const SCALE_RANGE: (f32, f32) = (0.4, 0.9);
pub const SATURATION_RANGE: (f32, f32) = (0.55, 1.0);
pub const VALUE_RANGE: (f32, f32) = (0.6, 1.0);
pub const STRIPE_FREQUENCY_RANGE: (f32, f32) = (1.5, 3.5);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubjectSpec {
    pub shape: ShapeClass,
    /// Degrees in [0, 360).
    pub hue: f32,
    pub saturation: f32,
    pub value: f32,
    pub texture: Option<Texture>,
    /// Bounding diameter as a fraction of the panel side.
    pub scale: f32,
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f32, f32)) -> f32 {
    lo + (hi - lo) * rng.random::<f32>()
}

/// Deterministic in `seed`. One third of subjects are untextured.
pub fn sample_spec(seed: u64) -> SubjectSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5bec);
    let shape = ShapeClass::ALL[rng.random_range(0..ShapeClass::ALL.len())];
    let hue = uniform(&mut rng, (0.0, 360.0)) % 360.0;
    let saturation = uniform(&mut rng, SATURATION_RANGE);
    let value = uniform(&mut rng, VALUE_RANGE);
    let textured = rng.random_range(0..3) != 0;
    let frequency = uniform(&mut rng, STRIPE_FREQUENCY_RANGE);
    let angle = uniform(&mut rng, (0.0, 180.0)) % 180.0;
    let scale = uniform(&mut rng, SCALE_RANGE);
    SubjectSpec {
        shape,
        hue,
        saturation,
        value,
        texture: textured.then_some(Texture { frequency, angle }),
        scale,
    }
}

impl SubjectSpec {
    pub fn validate(&self) -> Result<()> {
        let within = |v: f32, (lo, hi): (f32, f32)| v >= lo && v <= hi;
        if !(0.0..360.0).contains(&self.hue) {
            return Err(Error::invalid(format!("hue {} outside [0, 360)", self.hue)));
        }
        if !within(self.saturation, (0.0, 1.0)) || !within(self.value, (0.0, 1.0)) {
            return Err(Error::invalid("saturation and value must lie in [0, 1]"));
        }
        if !within(self.scale, SCALE_RANGE) {
            return Err(Error::invalid(format!("scale {} outside {SCALE_RANGE:?}", self.scale)));
        }
        if let Some(t) = self.texture {
            if !(t.frequency > 0.0 && t.frequency.is_finite()) {
                return Err(Error::invalid("stripe frequency must be positive"));
            }
        }
        Ok(())
    }

    /// `key=value` lines, one per field.
    pub fn to_kv(&self) -> String {
        let mut s = format!(
            "shape={}\nhue={}\nsaturation={}\nvalue={}\nscale={}\n",
            self.shape, self.hue, self.saturation, self.value, self.scale
        );
        match self.texture {
            Some(t) => s.push_str(&format!(
                "texture=stripes\nstripe_frequency={}\nstripe_angle={}\n",
                t.frequency, t.angle
            )),
            None => s.push_str("texture=none\n"),
        }
        s
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let map: BTreeMap<&str, &str> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .filter_map(|l| l.split_once('='))
            .map(|(k, v)| (k.trim(), v.trim()))
            .collect();
        let get = |k: &str| {
            map.get(k)
                .copied()
                .ok_or_else(|| Error::format("subject spec", format!("missing `{k}`")))
        };
        let num = |k: &str| -> Result<f32> {
            get(k)?
                .parse()
                .map_err(|_| Error::format("subject spec", format!("`{k}` is not a number")))
        };
        let texture = match get("texture")? {
            "none" => None,
            "stripes" => Some(Texture {
                frequency: num("stripe_frequency")?,
                angle: num("stripe_angle")?,
            }),
            other => return Err(Error::format("subject spec", format!("unknown texture `{other}`"))),
        };
        let spec = SubjectSpec {
            shape: get("shape")?.parse()?,
            hue: num("hue")?,
            saturation: num("saturation")?,
            value: num("value")?,
            texture,
            scale: num("scale")?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ViewParams {
    /// Degrees.
    pub rotation: f32,
    /// Fraction of the free margin, each component in [-1, 1].
    pub translation: (f32, f32),
    pub background: BackgroundClass,
    /// Seeds the noise-field background.
    pub background_seed: u64,
}

impl ViewParams {
    /// Upright, centered, plain background.
    pub fn canonical() -> Self {
        Self {
            rotation: 0.0,
            translation: (0.0, 0.0),
            background: BackgroundClass::Plain,
            background_seed: 0,
        }
    }
}

pub fn sample_view(seed: u64) -> ViewParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0071_e35e);
    ViewParams {
        rotation: uniform(&mut rng, (0.0, 360.0)),
        translation: (uniform(&mut rng, (-1.0, 1.0)), uniform(&mut rng, (-1.0, 1.0))),
        background: BackgroundClass::ALL[rng.random_range(0..BackgroundClass::ALL.len())],
        background_seed: rng.random(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_is_deterministic_and_valid() {
        for seed in 0..200 {
            let a = sample_spec(seed);
            assert_eq!(a, sample_spec(seed));
            a.validate().unwrap();
        }
    }

    #[test]
    fn every_shape_class_occurs() {
        let mut seen = [false; 6];
        for seed in 0..1000 {
            seen[sample_spec(seed).shape.index()] = true;
        }
        assert!(seen.iter().all(|&s| s), "{seen:?}");
    }

    #[test]
    fn hue_histogram_is_uniform() {
        let mut bins = [0usize; 10];
        let n = 10_000;
        for seed in 0..n {
            bins[(sample_spec(seed).hue / 36.0) as usize] += 1;
        }
        let expect = n as f64 / 10.0;
        let sd = (n as f64 * 0.1 * 0.9).sqrt();
        for b in bins {
            assert!((b as f64 - expect).abs() < 3.0 * sd, "{bins:?}");
        }
    }

    #[test]
    fn kv_round_trip() {
        for seed in 0..50 {
            let spec = sample_spec(seed);
            assert_eq!(SubjectSpec::from_kv(&spec.to_kv()).unwrap(), spec);
        }
        assert!(SubjectSpec::from_kv("shape=circle\n").is_err());
    }

    #[test]
    fn class_names_parse_back() {
        for c in ShapeClass::ALL {
            assert_eq!(c.name().parse::<ShapeClass>().unwrap(), c);
        }
        for b in BackgroundClass::ALL {
            assert_eq!(b.name().parse::<BackgroundClass>().unwrap(), b);
        }
    }
}
