use crate::error::{Error, Result};

const TEMPLATE: &str = include_str!("../../resources/meta_prompt.txt");
const EXAMPLE_START: &str = "Output Format Example:\n";
const EXAMPLE_END: &str = "\nFor content in summary";

pub const DEFAULT_WORD_LIMIT: usize = 50;
/// Every summary must open with this.
pub const SUMMARY_PREFIX: &str = "This set of full-frame photos captures an identical";
/// Every summary should also contain this.
pub const SUMMARY_PLACEMENT: &str = "firmly positioned in the real scene";

/// Instruction sent to the multimodal model alongside the reference image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MetaPromptTemplate {
    pub rows: usize,
    pub cols: usize,
    pub word_limit: usize,
}

impl Default for MetaPromptTemplate {
    fn default() -> Self {
        Self {
            rows: 3,
            cols: 3,
            word_limit: DEFAULT_WORD_LIMIT,
        }
    }
}

impl MetaPromptTemplate {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::invalid(format!("grid {rows}x{cols} has no panels")));
        }
        Ok(Self {
            rows,
            cols,
            word_limit: DEFAULT_WORD_LIMIT,
        })
    }

    pub fn render(&self) -> String {
        TEMPLATE
            .replace("{grid}", &format!("{}x{}", self.rows, self.cols))
            .replace("{limit}", &self.word_limit.to_string())
    }
}

/// The output example embedded in the template, as raw JSON text.
pub fn example_response() -> &'static str {
    let start = TEMPLATE.find(EXAMPLE_START).expect("template has an example") + EXAMPLE_START.len();
    let end = TEMPLATE.find(EXAMPLE_END).expect("template has a summary rule");
    &TEMPLATE[start..end]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_render_mentions_grid_and_limit() {
        let text = MetaPromptTemplate::default().render();
        assert!(text.contains("a 3x3 grid"));
        assert!(text.contains("Limit each description to 50 words."));
        assert!(!text.contains("{grid}") && !text.contains("{limit}"));
    }

    #[test]
    fn render_follows_dims() {
        let text = MetaPromptTemplate::new(1, 2).unwrap().render();
        assert!(text.contains("a 1x2 grid"));
        assert!(MetaPromptTemplate::new(0, 2).is_err());
    }

    #[test]
    fn example_is_json() {
        let v: serde_json::Value = serde_json::from_str(example_response()).unwrap();
        assert!(v["summary"].as_str().unwrap().starts_with(SUMMARY_PREFIX));
    }
}
