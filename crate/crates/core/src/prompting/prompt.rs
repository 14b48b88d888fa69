use crate::error::{Error, Result};
use crate::grid::MosaicLayout;

use super::parse::MetaDescriptions;
use super::template::SUMMARY_PREFIX;

const VIEW_PHRASES: [&str; 4] = [
    "shows {s} from the front",
    "shows {s} from a slight angle",
    "shows a close view of {s}, its color and surface in focus",
    "shows the outline and structure of {s}",
];

/// A mosaic prompt: summary sentence, then one description per panel in
/// raster order. The target panel carries the edit text.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MosaicPrompt {
    pub summary: String,
    pub panels: Vec<String>,
    /// Raster index of the target panel.
    pub target: usize,
}

pub fn tag(index: usize) -> String {
    format!("[IMAGE{}]", index + 1)
}

impl MosaicPrompt {
    pub fn edit(&self) -> &str {
        &self.panels[self.target]
    }

    /// `"<summary> [IMAGE1] <text> [IMAGE2] <text> ..."`.
    pub fn render(&self) -> String {
        let mut out = self.summary.clone();
        for (i, p) in self.panels.iter().enumerate() {
            out.push(' ');
            out.push_str(&tag(i));
            out.push(' ');
            out.push_str(p);
        }
        out
    }

    /// Prompt built from a multimodal model's descriptions, with the target's
    /// description replaced by the edit.
    pub fn from_descriptions(meta: &MetaDescriptions, layout: &MosaicLayout, edit: &str) -> Result<Self> {
        if meta.rows != layout.rows() || meta.cols != layout.cols() {
            return Err(Error::invalid(format!(
                "descriptions are {}x{}, layout is {}x{}",
                meta.rows,
                meta.cols,
                layout.rows(),
                layout.cols()
            )));
        }
        let edit = checked(edit, "edit")?;
        let (tr, tc) = layout.target();
        let target = tr * layout.cols() + tc;
        let mut panels = meta.descriptions.clone();
        panels[target] = edit.to_owned();
        Ok(Self {
            summary: meta.summary.clone(),
            panels,
            target,
        })
    }

    pub fn to_descriptions(&self, rows: usize, cols: usize) -> Result<MetaDescriptions> {
        if rows * cols != self.panels.len() {
            return Err(Error::invalid(format!(
                "{} panels do not fill {rows}x{cols}",
                self.panels.len()
            )));
        }
        Ok(MetaDescriptions {
            rows,
            cols,
            descriptions: self.panels.clone(),
            summary: self.summary.clone(),
            warnings: Vec::new(),
        })
    }
}

fn checked<'a>(text: &'a str, what: &str) -> Result<&'a str> {
    let t = text.trim();
    if t.is_empty() {
        return Err(Error::invalid(format!("{what} text is empty")));
    }
    Ok(t)
}

pub fn build_mosaic_prompt(layout: &MosaicLayout, subject: &str, edit: &str) -> Result<MosaicPrompt> {
    let subject = checked(subject, "subject")?;
    let edit = checked(edit, "edit")?;
    let (tr, tc) = layout.target();
    let target = tr * layout.cols() + tc;
    let mut k = 0;
    let panels = (0..layout.panel_count())
        .map(|i| {
            if i == target {
                return edit.to_owned();
            }
            let p = VIEW_PHRASES[k % VIEW_PHRASES.len()].replace("{s}", subject);
            k += 1;
            p
        })
        .collect();
    let bare = ["a ", "an ", "the "]
        .iter()
        .find_map(|a| subject.strip_prefix(a))
        .unwrap_or(subject);
    Ok(MosaicPrompt {
        summary: format!("{SUMMARY_PREFIX} {bare} subject firmly positioned in the real scene, seen in every panel."),
        panels,
        target,
    })
}

/// Splits a rendered prompt back into summary and per-panel texts.
pub fn split_rendered(text: &str) -> Result<(String, Vec<String>)> {
    let first = text
        .find("[IMAGE1]")
        .ok_or_else(|| Error::format("mosaic prompt", "no [IMAGE1] tag"))?;
    let summary = text[..first].trim().to_owned();
    let mut panels = Vec::new();
    let mut rest = &text[first..];
    let mut i = 0;
    while !rest.is_empty() {
        let open = tag(i);
        rest = rest
            .strip_prefix(&open)
            .ok_or_else(|| Error::format("mosaic prompt", format!("expected {open}")))?;
        let next = tag(i + 1);
        let end = rest.find(&next).unwrap_or(rest.len());
        panels.push(rest[..end].trim().to_owned());
        rest = &rest[end..];
        i += 1;
    }
    Ok((summary, panels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_assignment, AssignMode};
    use proptest::prelude::*;

    fn layout(rows: usize, cols: usize, target: (usize, usize)) -> MosaicLayout {
        let a = make_assignment(rows, cols, target, 1, AssignMode::Cycle, 0).unwrap();
        MosaicLayout::new(rows, cols, 24, 24, target, a).unwrap()
    }

    fn tag_count(text: &str, i: usize) -> usize {
        text.matches(&tag(i)).count()
    }

    #[test]
    fn three_by_three_tags_and_edit() {
        let p = build_mosaic_prompt(
            &layout(3, 3, (0, 0)),
            "a red striped star",
            "the star on a checker background",
        )
        .unwrap();
        let text = p.render();
        for i in 0..9 {
            assert_eq!(tag_count(&text, i), 1, "{}", tag(i));
        }
        assert_eq!(tag_count(&text, 9), 0);
        assert!(text.contains("[IMAGE1] the star on a checker background [IMAGE2]"));
        assert!(p
            .summary
            .starts_with("This set of full-frame photos captures an identical red striped star subject"));
        let positions: Vec<usize> = (0..9).map(|i| text.find(&tag(i)).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(text, p.render());
    }

    #[test]
    fn diptych_has_two_tags() {
        let text = build_mosaic_prompt(&layout(1, 2, (0, 0)), "s", "e").unwrap().render();
        assert_eq!(
            (tag_count(&text, 0), tag_count(&text, 1), tag_count(&text, 2)),
            (1, 1, 0)
        );
    }

    #[test]
    fn edit_follows_target_panel() {
        let p = build_mosaic_prompt(&layout(2, 2, (1, 0)), "subject", "edited").unwrap();
        assert_eq!(p.target, 2);
        assert_eq!(p.panels[2], "edited");
    }

    #[test]
    fn empty_texts_rejected() {
        assert!(build_mosaic_prompt(&layout(1, 2, (0, 0)), "s", "  ").is_err());
        assert!(build_mosaic_prompt(&layout(1, 2, (0, 0)), "", "e").is_err());
    }

    #[test]
    fn from_descriptions_replaces_target() {
        let meta = crate::prompting::parse_meta_response(crate::prompting::example_response(), 3, 3).unwrap();
        let p = MosaicPrompt::from_descriptions(&meta, &layout(3, 3, (0, 0)), "in the jungle").unwrap();
        assert_eq!(p.panels[0], "in the jungle");
        assert_eq!(p.panels[1..], meta.descriptions[1..]);
        assert!(MosaicPrompt::from_descriptions(&meta, &layout(1, 2, (0, 0)), "x").is_err());
    }

    proptest! {
        #[test]
        fn tag_count_and_round_trips(rows in 1usize..5, cols in 1usize..5, t in 0usize..25, subject in "[a-z]{1,8}( [a-z]{1,8}){0,3}", edit in "[a-z]{1,8}( [a-z]{1,8}){0,3}") {
            prop_assume!(rows * cols >= 2);
            let target = (t % rows, (t / rows) % cols);
            let l = layout(rows, cols, target);
            let p = build_mosaic_prompt(&l, &subject, &edit).unwrap();
            let text = p.render();
            for i in 0..rows * cols {
                prop_assert_eq!(tag_count(&text, i), 1);
            }
            prop_assert_eq!(tag_count(&text, rows * cols), 0);
            let (summary, panels) = split_rendered(&text).unwrap();
            prop_assert_eq!(&summary, &p.summary);
            prop_assert_eq!(&panels, &p.panels);
            let meta = p.to_descriptions(rows, cols).unwrap();
            let parsed = crate::prompting::parse_meta_response(&meta.to_json().to_string(), rows, cols).unwrap();
            prop_assert_eq!(parsed.descriptions, p.panels.clone());
        }
    }
}
