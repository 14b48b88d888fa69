use crate::condition::Condition;
use crate::synth::{BackgroundClass, ShapeClass, SubjectSpec};

/// Colour names and their hues in degrees, 30 degrees apart.
pub const COLOR_NAMES: [(&str, f32); 12] = [
    ("red", 0.0),
    ("orange", 30.0),
    ("yellow", 60.0),
    ("lime", 90.0),
    ("green", 120.0),
    ("teal", 150.0),
    ("cyan", 180.0),
    ("azure", 210.0),
    ("blue", 240.0),
    ("violet", 270.0),
    ("magenta", 300.0),
    ("pink", 330.0),
];

const DEFAULT_STRIPE_FREQUENCY: f32 = 2.5;

const SHAPE_WORDS: [(&str, ShapeClass); 12] = [
    ("circle", ShapeClass::Circle),
    ("circles", ShapeClass::Circle),
    ("square", ShapeClass::Square),
    ("squares", ShapeClass::Square),
    ("triangle", ShapeClass::Triangle),
    ("triangles", ShapeClass::Triangle),
    ("star", ShapeClass::Star),
    ("stars", ShapeClass::Star),
    ("cross", ShapeClass::Cross),
    ("crosses", ShapeClass::Cross),
    ("ring", ShapeClass::Ring),
    ("rings", ShapeClass::Ring),
];

const BACKGROUND_WORDS: [(&str, BackgroundClass); 7] = [
    ("plain", BackgroundClass::Plain),
    ("gradient", BackgroundClass::Gradient),
    ("noise", BackgroundClass::NoiseField),
    ("noisy", BackgroundClass::NoiseField),
    ("checker", BackgroundClass::Checker),
    ("checkered", BackgroundClass::Checker),
    ("checkerboard", BackgroundClass::Checker),
];

const STRIPED_WORDS: [&str; 3] = ["striped", "stripes", "stripy"];
const SOLID_WORDS: [&str; 3] = ["solid", "untextured", "smooth"];
const POSE_WORDS: [&str; 4] = ["rotated", "turned", "tilted", "moved"];

const STOP_WORDS: [&str; 34] = [
    "a",
    "an",
    "the",
    "on",
    "in",
    "at",
    "of",
    "with",
    "and",
    "or",
    "to",
    "its",
    "it",
    "is",
    "from",
    "by",
    "for",
    "into",
    "same",
    "subject",
    "background",
    "backdrop",
    "shape",
    "shows",
    "view",
    "panel",
    "image",
    "color",
    "colored",
    "new",
    "pose",
    "this",
    "that",
    "as",
];

fn hue_name(hue: f32) -> &'static str {
    let i = ((hue.rem_euclid(360.0) + 15.0) / 30.0) as usize % 12;
    COLOR_NAMES[i].0
}

/// Short text naming the subject's colour, texture and shape.
pub fn describe_subject(spec: &SubjectSpec) -> String {
    let texture = if spec.texture.is_some() { "striped" } else { "solid" };
    format!("a {texture} {} {}", hue_name(spec.hue), spec.shape.name())
}

/// Short text naming the target background and whether the subject is re-posed.
pub fn describe_edit(background: BackgroundClass, pose: bool) -> String {
    let mut s = format!("the subject on a {} background", background.name());
    if pose {
        s.push_str(", rotated and moved");
    }
    s
}

/// Result of [`condition_from_descriptions`].
#[derive(Clone, Debug, PartialEq)]
pub struct Extracted {
    pub condition: Condition,
    pub warnings: Vec<String>,
}

/// Keyword lookup over a fixed vocabulary. The first hit for each field wins;
/// `hints` fill subject fields that no text mentions. Text without any known
/// keyword yields the null condition.
pub fn condition_from_descriptions<S: AsRef<str>>(texts: &[S], hints: Option<&SubjectSpec>) -> Extracted {
    let mut c = Condition::default();
    let mut unknown: Vec<String> = Vec::new();
    let mut hits = 0usize;
    for text in texts {
        let lower = text.as_ref().to_lowercase();
        for word in lower.split(|ch: char| !(ch.is_alphanumeric() || ch == '-')) {
            let word = word.trim_matches('-');
            if word.is_empty() {
                continue;
            }
            let mut known = true;
            if let Some(&(_, s)) = SHAPE_WORDS.iter().find(|(w, _)| *w == word) {
                c.shape.get_or_insert(s);
            } else if let Some(&(_, h)) = COLOR_NAMES.iter().find(|(w, _)| *w == word) {
                c.hue.get_or_insert(h);
            } else if let Some(&(_, b)) = BACKGROUND_WORDS.iter().find(|(w, _)| *w == word) {
                c.background.get_or_insert(b);
            } else if STRIPED_WORDS.contains(&word) {
                c.texture.get_or_insert(DEFAULT_STRIPE_FREQUENCY);
            } else if SOLID_WORDS.contains(&word) {
                c.texture.get_or_insert(0.0);
            } else if POSE_WORDS.contains(&word) {
                c.pose = true;
            } else {
                known = false;
                if !STOP_WORDS.contains(&word) && !unknown.iter().any(|u| u == word) {
                    unknown.push(word.to_owned());
                }
            }
            hits += known as usize;
        }
    }
    let mut warnings = Vec::new();
    if !unknown.is_empty() {
        warnings.push(format!("ignored words outside the vocabulary: {}", unknown.join(", ")));
    }
    if hits == 0 {
        warnings.push("no recognised keywords; using the null condition".into());
        for w in &warnings {
            log::warn!("{w}");
        }
        return Extracted {
            condition: Condition::null(),
            warnings,
        };
    }
    if let Some(spec) = hints {
        c.shape.get_or_insert(spec.shape);
        c.hue.get_or_insert(spec.hue);
        if c.texture == Some(DEFAULT_STRIPE_FREQUENCY) {
            if let Some(t) = spec.texture {
                c.texture = Some(t.frequency);
            }
        }
        c.texture.get_or_insert(spec.texture.map_or(0.0, |t| t.frequency));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    Extracted { condition: c, warnings }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::sample_spec;
    use proptest::prelude::*;

    #[test]
    fn direct_vocabulary_hit() {
        let e = condition_from_descriptions(&["red circle on checker background"], None);
        assert_eq!(e.condition.hue, Some(0.0));
        assert_eq!(e.condition.shape, Some(ShapeClass::Circle));
        assert_eq!(e.condition.background, Some(BackgroundClass::Checker));
        assert!(e.warnings.is_empty());
    }

    #[test]
    fn empty_text_is_null() {
        let e = condition_from_descriptions(&[""], None);
        assert!(e.condition.is_null());
        assert!(!e.warnings.is_empty());
        assert!(condition_from_descriptions::<&str>(&[], None).condition.is_null());
    }

    #[test]
    fn synonyms_are_ignored_with_warning() {
        let e = condition_from_descriptions(&["crimson star"], None);
        assert_eq!(e.condition.hue, None);
        assert_eq!(e.condition.shape, Some(ShapeClass::Star));
        assert!(e.warnings[0].contains("crimson"));
        assert!(condition_from_descriptions(&["crimson"], None).condition.is_null());
    }

    #[test]
    fn hints_fill_unmentioned_fields() {
        let spec = sample_spec(4);
        let e = condition_from_descriptions(&["on a noisy backdrop"], Some(&spec));
        assert_eq!(e.condition.shape, Some(spec.shape));
        assert_eq!(e.condition.hue, Some(spec.hue));
        assert_eq!(e.condition.background, Some(BackgroundClass::NoiseField));
    }

    proptest! {
        #[test]
        fn describe_round_trips(seed in any::<u64>(), bg in 0usize..4, pose: bool) {
            let spec = sample_spec(seed);
            let background = BackgroundClass::ALL[bg];
            let e = condition_from_descriptions(&[describe_subject(&spec), describe_edit(background, pose)], None);
            let c = e.condition;
            prop_assert!(e.warnings.is_empty(), "{:?}", e.warnings);
            prop_assert_eq!(c.shape, Some(spec.shape));
            prop_assert_eq!(c.background, Some(background));
            prop_assert_eq!(c.pose, pose);
            prop_assert_eq!(c.texture.map(|t| t > 0.0), Some(spec.texture.is_some()));
            let d = (c.hue.unwrap() - spec.hue).rem_euclid(360.0);
            prop_assert!(d.min(360.0 - d) <= 15.0 + 1e-3);
        }
    }
}
